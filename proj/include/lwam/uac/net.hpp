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

// Live transport: a line-oriented TCP server answering chunk requests and a
// two-thread client (control ticker + chunk fetcher) sharing one buffer.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <system_error>
#include <thread>

#include "lwam/evaluate.hpp"
#include "lwam/inference.hpp"
#include "lwam/uac/buffer.hpp"
#include "lwam/uac/protocol.hpp"

namespace lwam::uac {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)), pending_(std::move(o.pending_)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
      pending_ = std::move(o.pending_);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void write_line(const std::string& line) {
    const std::string msg = line + "\n";
    std::size_t off = 0;
    while (off < msg.size()) {
      const ssize_t n = ::send(fd_, msg.data() + off, msg.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::system_error(errno, std::generic_category(), "send");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  // Next line without its terminator; nullopt on orderly close. With a
  // timeout, also nullopt if nothing complete arrives in time.
  std::optional<std::string> read_line(int timeout_ms = -1) {
    for (;;) {
      if (auto pos = pending_.find('\n'); pos != std::string::npos) {
        std::string line = pending_.substr(0, pos);
        pending_.erase(0, pos + 1);
        return line;
      }
      if (timeout_ms >= 0) {
        pollfd p{fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, timeout_ms);
        if (r == 0) return std::nullopt;
        if (r < 0 && errno != EINTR) throw std::system_error(errno, std::generic_category(), "poll");
        if (r < 0) continue;
      }
      char buf[65536];
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n == 0) return std::nullopt;
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::system_error(errno, std::generic_category(), "recv");
      }
      pending_.append(buf, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_ = -1;
  std::string pending_;
};

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Listens on all interfaces; port 0 picks a free port.
inline Socket listen_tcp(std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw std::system_error(errno, std::generic_category(), "socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
    throw std::system_error(errno, std::generic_category(), "bind port " + std::to_string(port));
  if (::listen(s.fd(), 4) < 0) throw std::system_error(errno, std::generic_category(), "listen");
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

// "host:port"
inline Socket connect_tcp(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("address must be host:port, got " + address);
  const std::string host = address.substr(0, colon), port = address.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw std::runtime_error("cannot resolve " + address + ": " + ::gai_strerror(rc));
  Socket s;
  for (addrinfo* a = res; a != nullptr && !s.valid(); a = a->ai_next) {
    Socket c(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (c.valid() && ::connect(c.fd(), a->ai_addr, a->ai_addrlen) == 0) s = std::move(c);
  }
  ::freeaddrinfo(res);
  if (!s.valid()) throw std::system_error(errno, std::generic_category(), "connect " + address);
  set_nodelay(s.fd());
  return s;
}

// Answers one request with the policy. The sampling seed mixes the server
// seed with the request id so replies are reproducible.
inline ChunkResponse answer(const Policy& policy, const ChunkRequest& req, std::uint64_t seed, std::uint32_t n_steps) {
  Observation obs;
  obs.instruction.assign(req.instruction_tokens.begin(), req.instruction_tokens.end());
  obs.context_frames = req.context_frames;
  obs.state = req.state;
  const auto t0 = std::chrono::steady_clock::now();
  auto chunks = policy.sample_actions({obs}, seed ^ (0x9E3779B97F4A7C15ull * (req.request_id + 1)), n_steps);
  ChunkResponse r;
  r.request_id = req.request_id;
  r.actions = std::move(chunks[0]);
  r.server_compute_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct ServerStats {
  std::size_t connections = 0;
  std::size_t requests = 0;
  std::size_t errors = 0;
};

// Serves clients one at a time until `stop` is set. Malformed requests get
// an error line and the connection stays open.
inline ServerStats serve(Socket& listener, const Policy& policy, std::uint64_t seed, std::uint32_t n_steps,
                         const std::atomic<bool>& stop, const std::function<void(const std::string&)>& log = {}) {
  ServerStats st;
  while (!stop) {
    pollfd p{listener.fd(), POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    Socket conn(::accept(listener.fd(), nullptr, nullptr));
    if (!conn.valid()) continue;
    set_nodelay(conn.fd());
    ++st.connections;
    if (log) log("client connected");
    try {
      while (!stop) {
        auto line = conn.read_line(100);
        if (!line) {
          pollfd q{conn.fd(), POLLIN, 0};
          if (::poll(&q, 1, 0) > 0) {
            char c;
            if (::recv(conn.fd(), &c, 1, MSG_PEEK) == 0) break;  // closed
          }
          continue;
        }
        try {
          const ChunkRequest req = decode_request(*line);
          conn.write_line(encode_response(answer(policy, req, seed, n_steps)));
          ++st.requests;
        } catch (const std::exception& e) {
          ++st.errors;
          conn.write_line(json{{"type", "error"}, {"message", e.what()}}.dump());
        }
      }
    } catch (const std::system_error& e) {
      if (log) log(std::string("connection dropped: ") + e.what());
    }
  }
  return st;
}

struct ClientOptions {
  UacConfig uac;
  WorldConfig world;
  std::uint64_t steps = 200;
  std::uint64_t seed = 0;
};

struct ClientReport {
  std::uint64_t steps = 0;
  std::size_t underflow_count = 0;
  std::size_t prefix_violation_count = 0;
  std::size_t trigger_count = 0;
  std::size_t expired_count = 0;
  std::size_t stale_count = 0;
  bool monotone_stitching = true;
  double mean_rtt_ms = 0.0;
  double final_ewma_ms = 0.0;
  std::size_t episodes = 0;
  std::size_t interceptions = 0;
};

inline json to_json(const ClientReport& r) {
  return {{"steps", r.steps},
          {"underflow_count", r.underflow_count},
          {"prefix_violation_count", r.prefix_violation_count},
          {"trigger_count", r.trigger_count},
          {"expired_count", r.expired_count},
          {"stale_count", r.stale_count},
          {"monotone_stitching", r.monotone_stitching},
          {"mean_rtt_ms", r.mean_rtt_ms},
          {"final_ewma_ms", r.final_ewma_ms},
          {"episodes", r.episodes},
          {"interceptions", r.interceptions}};
}

// Live control loop against a chunk server. The ticker applies one action per
// control period to a local world; the fetcher runs the single outstanding
// request. All buffer access goes through one mutex.
inline ClientReport run_client(Socket& conn, const ClientOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto& w = opt.world;
  const auto period = std::chrono::duration<double, std::milli>(opt.uac.control_period_ms);
  const auto start = clock::now();
  const auto now_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };

  std::mutex mu;
  std::condition_variable cv;
  ChunkScheduler sched(opt.uac);
  std::optional<ChunkRequest> outbox;
  bool done = false;
  std::string failure;
  double rtt_sum = 0.0;
  std::size_t responses = 0;

  std::mt19937_64 rng(opt.seed);
  WorldState state = sample_initial_state(rng, w);
  std::vector<std::vector<float>> history(w.H, render(state, w.context_res, w));
  std::uint32_t episode_step = 0;
  ClientReport rep;
  rep.steps = opt.steps;
  rep.episodes = 1;

  const auto make_request = [&](const PendingRequest& p) {
    const Observation o = observe(history, state, w);
    ChunkRequest r;
    r.request_id = p.request_id;
    r.t_req = p.t_req;
    r.instruction_tokens.assign(o.instruction.begin(), o.instruction.end());
    r.context_frames = o.context_frames;
    r.state = o.state;
    r.client_send_ms = p.send_ms;
    return r;
  };
  const auto exchange = [&](const ChunkRequest& req) {
    conn.write_line(encode_request(req));
    auto line = conn.read_line();
    if (!line) throw std::runtime_error("server closed the connection");
    if (const json j = json::parse(*line, nullptr, false); j.is_object() && j.value("type", "") == "error")
      throw std::runtime_error("server error: " + j.value("message", std::string()));
    return decode_response(*line);
  };

  // Bootstrap: the first chunk is awaited before the clock starts.
  {
    auto p = sched.maybe_trigger(now_ms());
    const ChunkResponse resp = exchange(make_request(*p));
    const auto r = sched.on_arrival(resp.request_id, resp.actions, now_ms());
    rtt_sum += r.rtt_ms;
    ++responses;
  }

  std::thread fetcher([&] {
    for (;;) {
      ChunkRequest req;
      {
        std::unique_lock lk(mu);
        cv.wait(lk, [&] { return done || outbox.has_value(); });
        if (done && !outbox) return;
        req = std::move(*outbox);
        outbox.reset();
      }
      try {
        const ChunkResponse resp = exchange(req);
        std::lock_guard lk(mu);
        const auto r = sched.on_arrival(resp.request_id, resp.actions, now_ms());
        if (!r.stale) {
          rtt_sum += r.rtt_ms;
          ++responses;
        }
      } catch (const std::exception& e) {
        std::lock_guard lk(mu);
        failure = e.what();
        done = true;
        return;
      }
    }
  });

  auto next = clock::now();
  for (std::uint64_t k = 0; k < opt.steps; ++k) {
    std::this_thread::sleep_until(next);
    next += std::chrono::duration_cast<clock::duration>(period);
    std::lock_guard lk(mu);
    if (!failure.empty()) break;
    const TickResult t = sched.tick();
    state = step(state, t.action, w);
    ++episode_step;
    history.erase(history.begin());
    history.push_back(render(state, w.context_res, w));
    if (intercepted(state, w) || episode_step + 1 >= w.episode_len) {
      if (intercepted(state, w)) ++rep.interceptions;
      state = sample_initial_state(rng, w);
      history.assign(w.H, render(state, w.context_res, w));
      episode_step = 0;
      ++rep.episodes;
    }
    if (k + 1 < opt.steps) {
      if (auto p = sched.maybe_trigger(now_ms())) {
        outbox = make_request(*p);
        cv.notify_one();
      }
    }
  }
  {
    std::lock_guard lk(mu);
    done = true;
  }
  cv.notify_one();
  fetcher.join();
  if (!failure.empty()) throw std::runtime_error(failure);

  const auto& buf = sched.buffer();
  rep.underflow_count = buf.underflow_count();
  rep.prefix_violation_count = buf.prefix_violation_count();
  rep.monotone_stitching = buf.chunk_ids_monotone();
  rep.trigger_count = sched.trigger_count();
  rep.expired_count = sched.expired_count();
  rep.stale_count = sched.stale_count();
  rep.mean_rtt_ms = responses ? rtt_sum / static_cast<double>(responses) : 0.0;
  rep.final_ewma_ms = sched.estimator().ewma_ms();
  return rep;
}

}  // namespace lwam::uac
