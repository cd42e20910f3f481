// Copyright 2026 The LWAM Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Wire format: one JSON object per line. Float arrays travel as base64 of
// little-endian IEEE-754 binary32.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lwam/synthworld.hpp"

namespace lwam::uac {

using json = nlohmann::json;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    for (int s : {18, 12, 6, 0}) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    if (rest == 2) v |= std::uint8_t(bytes[i + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(std::string_view text) {
  const auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ProtocolError("base64: length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && last && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad > 0 || (v[k] = value(c)) < 0) throw ProtocolError("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<char>((w >> 16) & 255));
    if (pad < 2) out.push_back(static_cast<char>((w >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<char>(w & 255));
  }
  return out;
}

inline std::string encode_f32(const std::vector<float>& v) {
  std::string bytes(v.size() * 4, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 255);
  }
  return base64_encode(bytes);
}

inline std::vector<float> decode_f32(std::string_view text) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw ProtocolError("f32 payload: byte count is not a multiple of 4");
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(std::uint8_t(bytes[i * 4 + b])) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

struct ChunkRequest {
  std::uint64_t request_id = 0;
  std::int64_t t_req = 0;
  std::vector<std::uint32_t> instruction_tokens;
  std::vector<float> context_frames;
  std::vector<float> state;
  double client_send_ms = 0.0;
  bool operator==(const ChunkRequest&) const = default;
};

struct ChunkResponse {
  std::uint64_t request_id = 0;
  std::vector<Action> actions;  // [T], each [A]
  double server_compute_ms = 0.0;
  bool operator==(const ChunkResponse&) const = default;
};

inline std::string encode_request(const ChunkRequest& r) {
  json j;
  j["type"] = "request";
  j["request_id"] = r.request_id;
  j["t_req"] = r.t_req;
  j["instruction_tokens"] = r.instruction_tokens;
  j["context_frames"] = encode_f32(r.context_frames);
  j["state"] = encode_f32(r.state);
  j["client_send_ms"] = r.client_send_ms;
  return j.dump();
}

// Actions are carried as binary32, so values must be representable in f32
// for the round trip to be exact.
inline std::string encode_response(const ChunkResponse& r) {
  std::vector<float> flat;
  for (const auto& a : r.actions) {
    flat.push_back(static_cast<float>(a[0]));
    flat.push_back(static_cast<float>(a[1]));
  }
  json j;
  j["type"] = "response";
  j["request_id"] = r.request_id;
  j["T"] = r.actions.size();
  j["A"] = 2;
  j["actions"] = encode_f32(flat);
  j["server_compute_ms"] = r.server_compute_ms;
  return j.dump();
}

namespace detail {

inline json parse_message(std::string_view line, const char* type) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object() || j.value("type", "") != type) throw ProtocolError(std::string("expected a ") + type + " message");
  return j;
}

template <typename F>
auto field(const json& j, const char* key, F get) {
  if (!j.contains(key)) throw ProtocolError(std::string("missing field ") + key);
  try {
    return get(j.at(key));
  } catch (const json::exception&) {
    throw ProtocolError(std::string("bad field ") + key);
  }
}

}  // namespace detail

inline ChunkRequest decode_request(std::string_view line) {
  const json j = detail::parse_message(line, "request");
  ChunkRequest r;
  r.request_id = detail::field(j, "request_id", [](const json& v) { return v.get<std::uint64_t>(); });
  r.t_req = detail::field(j, "t_req", [](const json& v) { return v.get<std::int64_t>(); });
  r.instruction_tokens =
      detail::field(j, "instruction_tokens", [](const json& v) { return v.get<std::vector<std::uint32_t>>(); });
  r.context_frames = decode_f32(detail::field(j, "context_frames", [](const json& v) { return v.get<std::string>(); }));
  r.state = decode_f32(detail::field(j, "state", [](const json& v) { return v.get<std::string>(); }));
  r.client_send_ms = detail::field(j, "client_send_ms", [](const json& v) { return v.get<double>(); });
  return r;
}

inline ChunkResponse decode_response(std::string_view line) {
  const json j = detail::parse_message(line, "response");
  ChunkResponse r;
  r.request_id = detail::field(j, "request_id", [](const json& v) { return v.get<std::uint64_t>(); });
  const auto T = detail::field(j, "T", [](const json& v) { return v.get<std::size_t>(); });
  const auto A = detail::field(j, "A", [](const json& v) { return v.get<std::size_t>(); });
  if (A != 2) throw ProtocolError("response: action width must be 2");
  const auto flat = decode_f32(detail::field(j, "actions", [](const json& v) { return v.get<std::string>(); }));
  if (flat.size() != T * A) throw ProtocolError("response: action payload does not match T x A");
  for (std::size_t i = 0; i < T; ++i) r.actions.push_back({flat[2 * i], flat[2 * i + 1]});
  r.server_compute_ms = detail::field(j, "server_compute_ms", [](const json& v) { return v.get<double>(); });
  return r;
}

}  // namespace lwam::uac
