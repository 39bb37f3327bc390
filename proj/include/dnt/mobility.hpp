#pragma once

// Five-way random-walk user mobility and trajectory datasets.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "dnt/common.hpp"
#include "dnt/radio.hpp"

namespace dnt::mobility {

enum class Move { stay = 0, forward = 1, back = 2, left = 3, right = 4 };

class MobilityProfile {
 public:
  /// Throws Error unless the probabilities are nonnegative and sum to 1
  /// within 1e-12 and the step is positive.
  MobilityProfile(std::array<double, 5> probabilities, double step);

  static MobilityProfile uniform(double step = 1.0);

  const std::array<double, 5>& probabilities() const { return probs_; }
  double step() const { return step_; }

 private:
  std::array<double, 5> probs_;
  double step_;
};

/// Rectangular area users are confined to. Defaults to 300 x 100 centred on
/// the origin.
struct Arena {
  double x_min = -150.0;
  double x_max = 150.0;
  double y_min = -50.0;
  double y_max = 50.0;

  bool contains(Vec2 p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
};

Move draw_move(const MobilityProfile& profile, Rng& rng);
/// forward/back: y +/- step; left/right: x -/+ step.
Vec2 apply_move(Vec2 pos, Move move, double step);

/// One unconstrained random-walk step.
Vec2 step_user(Vec2 pos, const MobilityProfile& profile, Rng& rng);
/// One step inside `arena`: a move that would leave it becomes a stay.
Vec2 step_user(Vec2 pos, const MobilityProfile& profile, const Arena& arena, Rng& rng);

/// Uniform draw over the union of the coverage discs (rejection sampling
/// from the discs' bounding box), restricted to the arena.
Vec2 sample_covered_position(const radio::Topology& topology, const Arena& arena, Rng& rng);

/// Moves every user one step.
std::vector<Vec2> step_all(const std::vector<Vec2>& positions,
                           const std::vector<MobilityProfile>& profiles,
                           const Arena& arena, Rng& rng);

/// Profiles with a per-user preferred direction: the preferred move gets
/// `bias` probability and the remaining mass is split evenly.
std::vector<MobilityProfile> drift_profiles(std::size_t num_users, double bias,
                                            double step, Rng& rng);

/// slots x users.
using Trajectory = std::vector<std::vector<Vec2>>;

struct TrajectoryDataset {
  std::size_t num_users = 0;
  std::vector<Trajectory> trajectories;
};

/// `num_traj` independent trajectories of `traj_len` joint positions each.
/// Initial positions are covered; later ones follow the random walk.
TrajectoryDataset generate_trajectories(std::size_t num_users, std::size_t num_traj,
                                        std::size_t traj_len,
                                        const std::vector<MobilityProfile>& profiles,
                                        const radio::Topology& topology, const Arena& arena,
                                        Rng& rng);

/// CSV with header `traj,slot,u0x,u0y,...`.
void write_trajectories_csv(std::ostream& out, const TrajectoryDataset& data);
TrajectoryDataset read_trajectories_csv(std::istream& in);

}  // namespace dnt::mobility
