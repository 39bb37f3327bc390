#pragma once

// Per-BS resource-block allocation: exact max-weight bipartite matching of
// associated users to free RBs, uplink RB reservation for twin sync, and the
// sequential pass over BSs in index order.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dnt/radio.hpp"

namespace dnt::alloc {

/// Row-major nonnegative weights; rows are users, columns are RBs.
class WeightMatrix {
 public:
  WeightMatrix() = default;
  WeightMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), w_(rows * cols, fill) {}
  WeightMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return w_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return w_[r * cols_ + c]; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> w_;
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double total_weight = 0.0;                               // summed in row order
};

/// Maximum-weight matching (Kuhn-Munkres with potentials). Rectangular
/// inputs are padded with zero-weight dummies which are dropped from the
/// result. Throws on negative or non-finite weights.
MatchResult hungarian_max_weight(const WeightMatrix& w);

/// Entry (i, k) is the downlink rate of users[i] on rbs[k] of `bs` given the
/// grants already in `fixed`.
WeightMatrix build_weights(const radio::RadioEnv& env, const radio::Allocation& fixed,
                           std::size_t bs, const std::vector<std::size_t>& users,
                           const std::vector<std::size_t>& rbs);

/// Best uplink RB for `bs` under the interference in `fixed`, skipping RBs in
/// `excluded`. Ties go to the lowest index. nullopt when not syncing or when
/// no RB is available.
std::optional<std::size_t> select_uplink_rb(const radio::RadioEnv& env,
                                            const radio::Allocation& fixed, std::size_t bs,
                                            bool sync, const std::vector<bool>& excluded = {});

/// What one BS decided this slot.
struct BsDecision {
  bool sync = false;
  std::vector<std::size_t> users;  // associated users, ascending
};

struct AllocatorOptions {
  /// 1 = a single pass in BS index order. Extra rounds re-match each BS
  /// against everyone else's grants and keep the change only when the
  /// realized sum rate does not drop.
  std::size_t rounds = 1;
  /// Keep RBs another BS already reserved for its uplink away from later
  /// BSs' users and uplinks.
  bool protect_uplinks = true;
};

enum class EventKind { sync_delay_failure, no_uplink_rb, unserved_user };

struct AllocationEvent {
  EventKind kind;
  std::size_t bs = 0;
  std::size_t user = 0;  // for unserved_user
  double delay = 0.0;    // for sync_delay_failure

  std::string describe() const;
};

struct AllocationOutcome {
  radio::Allocation allocation;
  std::vector<bool> sync_requested;
  std::vector<bool> sync_success;
  std::vector<double> uplink_delay;      // final delay of successful syncs, +inf otherwise
  std::vector<double> matched_weight;    // per-BS matched weight from its last solve
  std::vector<AllocationEvent> events;
};

/// Sequential allocation: BSs in index order reserve an uplink RB when syncing (sync
/// fails and the RB is released when the delay would exceed the cap), match
/// their associated users to the remaining RBs, and pass the accumulated
/// allocation on.
AllocationOutcome allocate_all(const radio::RadioEnv& env,
                               const std::vector<BsDecision>& decisions,
                               const AllocatorOptions& options = {});

/// Sum of realized downlink rates over all users.
double total_rate(const radio::RadioEnv& env, const radio::Allocation& alloc);

}  // namespace dnt::alloc
