#include "dnt/twin.hpp"

namespace dnt::twin {

TwinState TwinState::mirror(const PhysicalState& state) {
  return {state, std::vector<Provenance>(state.size(), Provenance::received)};
}

LocalObservation observe(std::size_t bs, const PhysicalState& phys,
                         const radio::Topology& topology) {
  if (bs >= topology.num_bs()) throw Error("observe: BS index out of range");
  LocalObservation obs;
  obs.bs = bs;
  for (std::size_t u = 0; u < phys.size(); ++u) {
    if (topology.covers(bs, phys[u])) {
      obs.covered_users.push_back(u);
      obs.positions.push_back(phys[u]);
    }
  }
  return obs;
}

std::vector<std::size_t> coverage_counts(const PhysicalState& phys,
                                         const radio::Topology& topology) {
  std::vector<std::size_t> counts(phys.size(), 0);
  for (std::size_t u = 0; u < phys.size(); ++u) {
    for (std::size_t m = 0; m < topology.num_bs(); ++m) counts[u] += topology.covers(m, phys[u]) ? 1 : 0;
  }
  return counts;
}

TwinState compose_twin(const TwinState& prev_twin, const PhysicalState& predictions,
                       std::span<const LocalObservation> observations,
                       const std::vector<bool>& sync_success) {
  if (!prev_twin.positions.empty() && prev_twin.positions.size() != predictions.size()) {
    throw Error("compose_twin: user count changed between slots");
  }
  if (observations.size() != sync_success.size()) {
    throw Error("compose_twin: one sync flag per observation required");
  }
  TwinState next;
  next.positions = predictions;
  next.provenance.assign(predictions.size(), Provenance::predicted);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (!sync_success[i]) continue;
    const auto& obs = observations[i];
    for (std::size_t k = 0; k < obs.covered_users.size(); ++k) {
      const std::size_t u = obs.covered_users[k];
      if (u >= next.positions.size()) throw Error("compose_twin: observed user out of range");
      next.positions[u] = obs.positions[k];
      next.provenance[u] = Provenance::received;
    }
  }
  return next;
}

double sync_error(const PhysicalState& phys, const std::vector<Vec2>& twin) {
  if (phys.size() != twin.size()) throw Error("sync_error: state length mismatch");
  if (phys.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t u = 0; u < phys.size(); ++u) sum += squared_distance(phys[u], twin[u]);
  return sum / static_cast<double>(phys.size());
}

double sync_error(const PhysicalState& phys, const TwinState& twin) {
  return sync_error(phys, twin.positions);
}

double team_reward(const PhysicalState& phys, const TwinState& twin,
                   std::span<const double> rates, std::span<const std::size_t> assoc_counts,
                   double epsilon, double rho) {
  if (assoc_counts.size() != phys.size() || rates.size() != phys.size()) {
    throw Error("team_reward: per-user vectors must have length U");
  }
  bool all_single = true;
  for (std::size_t xi : assoc_counts) all_single = all_single && xi == 1;
  if (all_single) {
    double total_rate = 0.0;
    for (double c : rates) total_rate += c;
    return -(1.0 - epsilon) * sync_error(phys, twin) + epsilon * total_rate;
  }
  double penalty = 0.0;
  for (std::size_t xi : assoc_counts) {
    if (xi > 1) penalty += static_cast<double>(xi) * rho;
  }
  return penalty;
}

}  // namespace dnt::twin
