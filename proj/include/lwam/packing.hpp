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

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lwam/numerics/tensor.hpp"

namespace lwam {

enum class TokenRole : std::uint8_t { Instruction, ContextObs, State, LatentQuery, FutureEmbed, PriorAction, PostAction };
enum class Branch : std::uint8_t { Shared, Prior, Posterior };

inline const char* role_name(TokenRole r) {
  switch (r) {
    case TokenRole::Instruction: return "instruction";
    case TokenRole::ContextObs: return "context_obs";
    case TokenRole::State: return "state";
    case TokenRole::LatentQuery: return "latent_query";
    case TokenRole::FutureEmbed: return "future_embed";
    case TokenRole::PriorAction: return "prior_action";
    case TokenRole::PostAction: return "post_action";
  }
  return "?";
}

class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SlotCounts {
  std::size_t n_instr = 0;
  std::size_t n_ctx_tokens = 0;
  std::size_t n_state = 0;
  std::size_t K = 0;
  std::size_t T = 0;
  bool operator==(const SlotCounts&) const = default;
};

// Packed token layout: [shared context | prior (K latent, T action) |
// posterior (K future, T action)]. Either branch block may be absent.
struct PackedLayout {
  SlotCounts counts;
  std::vector<TokenRole> roles;
  std::vector<std::size_t> position_ids;
  std::vector<Branch> branch;

  std::size_t total_len() const { return roles.size(); }
  std::size_t context_len() const { return counts.n_instr + counts.n_ctx_tokens + counts.n_state; }
  bool has_branch(Branch b) const {
    for (Branch x : branch)
      if (x == b) return true;
    return false;
  }
  std::vector<std::size_t> slots_with_role(TokenRole r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == r) out.push_back(i);
    return out;
  }
  bool operator==(const PackedLayout&) const = default;
};

using DualBranchMask = BoolMatrix;

namespace detail {

inline void append_branch(PackedLayout& l, Branch b) {
  const std::size_t c = l.context_len();
  const TokenRole latent = b == Branch::Prior ? TokenRole::LatentQuery : TokenRole::FutureEmbed;
  const TokenRole action = b == Branch::Prior ? TokenRole::PriorAction : TokenRole::PostAction;
  for (std::size_t k = 0; k < l.counts.K; ++k) {
    l.roles.push_back(latent);
    l.position_ids.push_back(c + k);
    l.branch.push_back(b);
  }
  for (std::size_t i = 0; i < l.counts.T; ++i) {
    l.roles.push_back(action);
    l.position_ids.push_back(c + l.counts.K + i);
    l.branch.push_back(b);
  }
}

inline PackedLayout context_only(std::size_t n_instr, std::size_t n_ctx_tokens, std::size_t n_state, std::size_t K,
                                 std::size_t T) {
  if (n_instr == 0 || n_ctx_tokens == 0) throw LayoutError("layout: instruction and context counts must be >= 1");
  if (T == 0) throw LayoutError("layout: action chunk length T must be >= 1");
  PackedLayout l;
  l.counts = {n_instr, n_ctx_tokens, n_state, K, T};
  auto push = [&](TokenRole r, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      l.roles.push_back(r);
      l.position_ids.push_back(l.position_ids.size());
      l.branch.push_back(Branch::Shared);
    }
  };
  push(TokenRole::Instruction, n_instr);
  push(TokenRole::ContextObs, n_ctx_tokens);
  push(TokenRole::State, n_state);
  return l;
}

}  // namespace detail

// Full dual-branch layout.
inline PackedLayout build_layout(std::size_t n_instr, std::size_t n_ctx_tokens, std::size_t n_state, std::size_t K,
                                 std::size_t T) {
  if (K == 0) throw LayoutError("layout: latent slot count K must be >= 1");
  PackedLayout l = detail::context_only(n_instr, n_ctx_tokens, n_state, K, T);
  detail::append_branch(l, Branch::Prior);
  detail::append_branch(l, Branch::Posterior);
  return l;
}

// Single-branch layout (shared context plus one branch). K may be 0 only for
// the prior branch, which yields the no-latent baseline [x; o; s; a].
inline PackedLayout build_single_branch_layout(std::size_t n_instr, std::size_t n_ctx_tokens, std::size_t n_state,
                                               std::size_t K, std::size_t T, Branch keep) {
  if (keep == Branch::Shared) throw LayoutError("layout: kept branch must be Prior or Posterior");
  if (K == 0 && keep == Branch::Posterior) throw LayoutError("layout: posterior branch needs K >= 1 future slots");
  PackedLayout l = detail::context_only(n_instr, n_ctx_tokens, n_state, K, T);
  detail::append_branch(l, keep);
  return l;
}

inline void validate_layout(const PackedLayout& l) {
  const std::size_t n = l.roles.size();
  if (l.position_ids.size() != n || l.branch.size() != n) throw LayoutError("layout: per-slot arrays disagree in length");
  for (std::size_t i = 0; i < n; ++i) {
    const TokenRole r = l.roles[i];
    const Branch expect = (r == TokenRole::LatentQuery || r == TokenRole::PriorAction) ? Branch::Prior
                          : (r == TokenRole::FutureEmbed || r == TokenRole::PostAction) ? Branch::Posterior
                                                                                          : Branch::Shared;
    if (l.branch[i] != expect) throw LayoutError("layout: slot " + std::to_string(i) + " role/branch mismatch");
  }
}

// Dual-branch attention mask: shared queries see only shared keys; each
// branch sees shared keys plus its own slots; nothing crosses branches.
inline DualBranchMask build_mask(const PackedLayout& layout) {
  validate_layout(layout);
  const std::size_t n = layout.total_len();
  DualBranchMask allow(n, n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) {
      const Branch bq = layout.branch[q], bk = layout.branch[k];
      allow.set(q, k, bk == Branch::Shared || bk == bq);
    }
  return allow;
}

// Drops every slot of `drop` from the layout and mask, preserving position IDs.
inline std::pair<PackedLayout, DualBranchMask> strip_branch(const PackedLayout& layout, const DualBranchMask& mask,
                                                            Branch drop) {
  if (drop == Branch::Shared) throw LayoutError("strip_branch: cannot strip the shared context");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < layout.total_len(); ++i)
    if (layout.branch[i] != drop) keep.push_back(i);
  PackedLayout out;
  out.counts = layout.counts;
  for (std::size_t i : keep) {
    out.roles.push_back(layout.roles[i]);
    out.position_ids.push_back(layout.position_ids[i]);
    out.branch.push_back(layout.branch[i]);
  }
  DualBranchMask m(keep.size(), keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = 0; b < keep.size(); ++b) m.set(a, b, mask(keep[a], keep[b]));
  return {std::move(out), std::move(m)};
}

// Maps prior slot j (0..K+T-1) to its absolute index, or posterior likewise.
inline std::vector<std::size_t> branch_slots(const PackedLayout& layout, Branch b) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layout.total_len(); ++i)
    if (layout.branch[i] == b) out.push_back(i);
  return out;
}

}  // namespace lwam
