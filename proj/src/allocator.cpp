#include "dnt/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dnt::alloc {

WeightMatrix::WeightMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), w_(std::move(values)) {
  if (w_.size() != rows * cols) throw Error("WeightMatrix: value count does not match shape");
}

MatchResult hungarian_max_weight(const WeightMatrix& w) {
  MatchResult result;
  const std::size_t rows = w.rows(), cols = w.cols();
  if (rows == 0 || cols == 0) return result;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!(w(r, c) >= 0.0) || !std::isfinite(w(r, c))) {
        throw Error("hungarian_max_weight: weights must be finite and nonnegative");
      }
    }
  }

  // Square min-cost assignment on cost = -weight; dummies cost 0. Arrays are
  // 1-based with index 0 as the virtual root, as in the classic formulation.
  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? -w(i, j) : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = row_to_col[r];
    if (c < cols) {
      result.pairs.emplace_back(r, c);
      result.total_weight += w(r, c);
    }
  }
  return result;
}

WeightMatrix build_weights(const radio::RadioEnv& env, const radio::Allocation& fixed,
                           std::size_t bs, const std::vector<std::size_t>& users,
                           const std::vector<std::size_t>& rbs) {
  WeightMatrix w(users.size(), rbs.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    for (std::size_t k = 0; k < rbs.size(); ++k) {
      w(i, k) = radio::downlink_rate_on_rb(env, fixed, users[i], bs, rbs[k]);
    }
  }
  return w;
}

std::optional<std::size_t> select_uplink_rb(const radio::RadioEnv& env,
                                            const radio::Allocation& fixed, std::size_t bs,
                                            bool sync, const std::vector<bool>& excluded) {
  if (!sync) return std::nullopt;
  std::optional<std::size_t> best;
  double best_rate = -1.0;
  for (std::size_t n = 0; n < fixed.num_rbs(); ++n) {
    if (n < excluded.size() && excluded[n]) continue;
    if (fixed.rb_busy(bs, n)) continue;
    const double rate = radio::uplink_rate_on_rb(env, fixed, bs, n);
    if (rate > best_rate) {
      best_rate = rate;
      best = n;
    }
  }
  return best;
}

std::string AllocationEvent::describe() const {
  switch (kind) {
    case EventKind::sync_delay_failure:
      return "sync_fail_delay:bs" + std::to_string(bs) + ":" + format_real(delay);
    case EventKind::no_uplink_rb: return "sync_fail_no_rb:bs" + std::to_string(bs);
    case EventKind::unserved_user:
      return "unserved:bs" + std::to_string(bs) + ":u" + std::to_string(user);
  }
  return "?";
}

double total_rate(const radio::RadioEnv& env, const radio::Allocation& alloc) {
  double total = 0.0;
  for (double r : radio::user_rates(env, alloc)) total += r;
  return total;
}

namespace {

std::vector<bool> reserved_by_others(const radio::Allocation& alloc, std::size_t bs) {
  std::vector<bool> reserved(alloc.num_rbs(), false);
  for (std::size_t j = 0; j < alloc.num_bs(); ++j) {
    if (j == bs) continue;
    for (std::size_t n = 0; n < alloc.num_rbs(); ++n) reserved[n] = reserved[n] || alloc.y(j, n) != 0;
  }
  return reserved;
}

/// Matches `users` of `bs` onto its free RBs and writes the grants.
double match_bs(const radio::RadioEnv& env, radio::Allocation& alloc, std::size_t bs,
                const std::vector<std::size_t>& users, bool protect,
                std::vector<std::size_t>* unserved) {
  const auto reserved = protect ? reserved_by_others(alloc, bs) : std::vector<bool>{};
  std::vector<std::size_t> rbs;
  for (std::size_t n = 0; n < alloc.num_rbs(); ++n) {
    if (alloc.y(bs, n) != 0) continue;
    if (protect && reserved[n]) continue;
    rbs.push_back(n);
  }
  const WeightMatrix w = build_weights(env, alloc, bs, users, rbs);
  const MatchResult match = hungarian_max_weight(w);
  std::vector<bool> served(users.size(), false);
  for (auto [i, k] : match.pairs) {
    alloc.set_x(bs, users[i], rbs[k], 1);
    served[i] = true;
  }
  if (unserved != nullptr) {
    for (std::size_t i = 0; i < users.size(); ++i) {
      if (!served[i]) unserved->push_back(users[i]);
    }
  }
  return match.total_weight;
}

}  // namespace

AllocationOutcome allocate_all(const radio::RadioEnv& env,
                               const std::vector<BsDecision>& decisions,
                               const AllocatorOptions& options) {
  const std::size_t M = env.topology.num_bs();
  const std::size_t U = env.users.size();
  const std::size_t N = env.params.num_rbs;
  if (decisions.size() != M) throw Error("allocate_all: one decision per BS required");
  if (options.rounds == 0) throw Error("allocate_all: at least one round required");

  AllocationOutcome out;
  out.allocation = radio::Allocation(M, U, N);
  out.sync_requested.assign(M, false);
  out.sync_success.assign(M, false);
  out.uplink_delay.assign(M, std::numeric_limits<double>::infinity());
  out.matched_weight.assign(M, 0.0);
  auto& alloc = out.allocation;

  std::vector<bool> claimed(U, false);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t u : decisions[m].users) {
      if (u >= U) throw Error("allocate_all: associated user out of range");
    }
  }

  std::vector<std::vector<std::size_t>> grant_users(M);
  for (std::size_t m = 0; m < M; ++m) {
    const BsDecision& d = decisions[m];
    out.sync_requested[m] = d.sync;
    if (d.sync) {
      const auto excluded = options.protect_uplinks ? reserved_by_others(alloc, m) : std::vector<bool>{};
      const auto rb = select_uplink_rb(env, alloc, m, true, excluded);
      if (!rb) {
        out.events.push_back({EventKind::no_uplink_rb, m, 0, 0.0});
      } else {
        alloc.set_y(m, *rb, 1);
        const double delay = radio::uplink_delay(env, alloc, m);
        if (delay > env.params.delay_cap) {
          alloc.set_y(m, *rb, 0);
          out.events.push_back({EventKind::sync_delay_failure, m, 0, delay});
        } else {
          out.sync_success[m] = true;
        }
      }
    }
    // A user already granted by an earlier BS cannot take a second RB (8b);
    // the association still counts toward the multi-serve penalty.
    for (std::size_t u : d.users) {
      if (!claimed[u]) grant_users[m].push_back(u);
    }
    std::vector<std::size_t> unserved;
    out.matched_weight[m] =
        match_bs(env, alloc, m, grant_users[m], options.protect_uplinks, &unserved);
    for (std::size_t u : grant_users[m]) claimed[u] = true;
    for (std::size_t u : unserved) {
      claimed[u] = false;
      out.events.push_back({EventKind::unserved_user, m, u, 0.0});
    }
  }

  for (std::size_t round = 1; round < options.rounds; ++round) {
    for (std::size_t m = 0; m < M; ++m) {
      radio::Allocation before = alloc;
      const double before_rate = total_rate(env, alloc);
      alloc.clear_users(m);
      const double weight = match_bs(env, alloc, m, grant_users[m], options.protect_uplinks, nullptr);
      if (total_rate(env, alloc) < before_rate) {
        alloc = std::move(before);
      } else {
        out.matched_weight[m] = weight;
      }
    }
  }

  // Later grants can still raise an uplink's interference when uplinks are
  // not protected. Releasing an uplink only lowers interference elsewhere, so
  // this settles.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t m = 0; m < M; ++m) {
      if (!out.sync_success[m]) continue;
      const double delay = radio::uplink_delay(env, alloc, m);
      if (delay > env.params.delay_cap) {
        for (std::size_t n = 0; n < N; ++n) alloc.set_y(m, n, 0);
        out.sync_success[m] = false;
        out.events.push_back({EventKind::sync_delay_failure, m, 0, delay});
        changed = true;
      }
    }
  }
  for (std::size_t m = 0; m < M; ++m) {
    if (out.sync_success[m]) out.uplink_delay[m] = radio::uplink_delay(env, alloc, m);
  }
  return out;
}

}  // namespace dnt::alloc
