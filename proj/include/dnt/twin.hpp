#pragma once

// Physical/twin state bookkeeping: per-BS observation, twin composition,
// synchronization error and the team reward.

#include <cstddef>
#include <span>
#include <vector>

#include "dnt/common.hpp"
#include "dnt/radio.hpp"

namespace dnt::twin {

/// Positions of all U users at one slot.
using PhysicalState = std::vector<Vec2>;

struct LocalObservation {
  std::size_t bs = 0;
  std::vector<std::size_t> covered_users;
  std::vector<Vec2> positions;
};

enum class Provenance { received, predicted };

struct TwinState {
  std::vector<Vec2> positions;
  std::vector<Provenance> provenance;

  /// A twin that mirrors `state` exactly (every entry received).
  static TwinState mirror(const PhysicalState& state);
};

/// Users inside the coverage disc of `bs` (boundary inclusive).
LocalObservation observe(std::size_t bs, const PhysicalState& phys,
                         const radio::Topology& topology);

/// Number of BSs whose disc contains each user.
std::vector<std::size_t> coverage_counts(const PhysicalState& phys,
                                         const radio::Topology& topology);

/// Users covered by BSs that synced take their observed positions; everyone
/// else (including users no BS covers) takes the prediction.
TwinState compose_twin(const TwinState& prev_twin, const PhysicalState& predictions,
                       std::span<const LocalObservation> observations,
                       const std::vector<bool>& sync_success);

/// ||s - s_twin||^2 over all 2U coordinates, divided by U.
double sync_error(const PhysicalState& phys, const std::vector<Vec2>& twin);
double sync_error(const PhysicalState& phys, const TwinState& twin);

/// Team reward:
///   every xi_u == 1:  -(1 - eps)/U ||s - s_twin||^2 + eps * sum(rates)
///   otherwise:        sum_u [xi_u > 1] * xi_u * rho
double team_reward(const PhysicalState& phys, const TwinState& twin,
                   std::span<const double> rates, std::span<const std::size_t> assoc_counts,
                   double epsilon, double rho);

}  // namespace dnt::twin
