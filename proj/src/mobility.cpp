#include "dnt/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace dnt::mobility {

MobilityProfile::MobilityProfile(std::array<double, 5> probabilities, double step)
    : probs_(probabilities), step_(step) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error("mobility profile: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw Error("mobility profile: probabilities must sum to 1");
  if (!(step > 0.0) || !std::isfinite(step)) throw Error("mobility profile: step must be positive");
}

MobilityProfile MobilityProfile::uniform(double step) {
  return MobilityProfile({0.2, 0.2, 0.2, 0.2, 0.2}, step);
}

Move draw_move(const MobilityProfile& profile, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const auto& p = profile.probabilities();
  for (int i = 0; i < 5; ++i) {
    acc += p[i];
    if (u < acc) return static_cast<Move>(i);
  }
  // Rounding left u above the cumulative sum; take the last move with mass.
  for (int i = 4; i >= 0; --i) {
    if (p[i] > 0.0) return static_cast<Move>(i);
  }
  return Move::stay;
}

Vec2 apply_move(Vec2 pos, Move move, double step) {
  switch (move) {
    case Move::stay: return pos;
    case Move::forward: return {pos.x, pos.y + step};
    case Move::back: return {pos.x, pos.y - step};
    case Move::left: return {pos.x - step, pos.y};
    case Move::right: return {pos.x + step, pos.y};
  }
  return pos;
}

Vec2 step_user(Vec2 pos, const MobilityProfile& profile, Rng& rng) {
  return apply_move(pos, draw_move(profile, rng), profile.step());
}

Vec2 step_user(Vec2 pos, const MobilityProfile& profile, const Arena& arena, Rng& rng) {
  const Vec2 next = step_user(pos, profile, rng);
  return arena.contains(next) ? next : pos;
}

Vec2 sample_covered_position(const radio::Topology& topology, const Arena& arena, Rng& rng) {
  topology.validate();
  double x0 = topology.bs_positions[0].x, x1 = x0;
  double y0 = topology.bs_positions[0].y, y1 = y0;
  for (Vec2 b : topology.bs_positions) {
    x0 = std::min(x0, b.x);
    x1 = std::max(x1, b.x);
    y0 = std::min(y0, b.y);
    y1 = std::max(y1, b.y);
  }
  const double r = topology.coverage_radius;
  x0 = std::max(x0 - r, arena.x_min);
  x1 = std::min(x1 + r, arena.x_max);
  y0 = std::max(y0 - r, arena.y_min);
  y1 = std::min(y1 + r, arena.y_max);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Vec2 p{rng.uniform(x0, x1), rng.uniform(y0, y1)};
    for (std::size_t m = 0; m < topology.num_bs(); ++m) {
      if (topology.covers(m, p)) return p;
    }
  }
  throw Error("sample_covered_position: coverage does not intersect the arena");
}

std::vector<Vec2> step_all(const std::vector<Vec2>& positions,
                           const std::vector<MobilityProfile>& profiles, const Arena& arena,
                           Rng& rng) {
  if (profiles.size() != positions.size()) throw Error("step_all: one profile per user required");
  std::vector<Vec2> next(positions.size());
  for (std::size_t u = 0; u < positions.size(); ++u) {
    next[u] = step_user(positions[u], profiles[u], arena, rng);
  }
  return next;
}

std::vector<MobilityProfile> drift_profiles(std::size_t num_users, double bias, double step,
                                            Rng& rng) {
  if (!(bias >= 0.0 && bias <= 1.0)) throw Error("drift_profiles: bias must lie in [0, 1]");
  std::vector<MobilityProfile> out;
  out.reserve(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    const auto preferred = 1 + rng.uniform_index(4);  // one of the four moves
    std::array<double, 5> p{};
    const double rest = (1.0 - bias) / 4.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (i == preferred) continue;
      p[i] = rest;
      sum += rest;
    }
    p[preferred] = 1.0 - sum;
    out.emplace_back(p, step);
  }
  return out;
}

TrajectoryDataset generate_trajectories(std::size_t num_users, std::size_t num_traj,
                                        std::size_t traj_len,
                                        const std::vector<MobilityProfile>& profiles,
                                        const radio::Topology& topology, const Arena& arena,
                                        Rng& rng) {
  if (num_users == 0 || num_traj == 0 || traj_len == 0) {
    throw Error("generate_trajectories: counts must be positive");
  }
  if (profiles.size() != num_users) throw Error("generate_trajectories: one profile per user");
  TrajectoryDataset data;
  data.num_users = num_users;
  data.trajectories.reserve(num_traj);
  for (std::size_t k = 0; k < num_traj; ++k) {
    Trajectory traj;
    traj.reserve(traj_len);
    std::vector<Vec2> pos(num_users);
    for (auto& p : pos) p = sample_covered_position(topology, arena, rng);
    traj.push_back(pos);
    for (std::size_t t = 1; t < traj_len; ++t) traj.push_back(step_all(traj.back(), profiles, arena, rng));
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

void write_trajectories_csv(std::ostream& out, const TrajectoryDataset& data) {
  out << "traj,slot";
  for (std::size_t u = 0; u < data.num_users; ++u) out << ",u" << u << "x,u" << u << "y";
  out << '\n';
  for (std::size_t k = 0; k < data.trajectories.size(); ++k) {
    const auto& traj = data.trajectories[k];
    for (std::size_t t = 0; t < traj.size(); ++t) {
      out << k << ',' << t;
      for (Vec2 p : traj[t]) out << ',' << format_real(p.x) << ',' << format_real(p.y);
      out << '\n';
    }
  }
}

TrajectoryDataset read_trajectories_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("trajectory csv: missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 4 || (columns - 2) % 2 != 0 || line.rfind("traj,slot", 0) != 0) {
    throw Error("trajectory csv: malformed header");
  }
  TrajectoryDataset data;
  data.num_users = (columns - 2) / 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != columns) throw Error("trajectory csv: wrong column count");
    const auto k = static_cast<std::size_t>(vals[0]);
    const auto t = static_cast<std::size_t>(vals[1]);
    if (k == data.trajectories.size()) data.trajectories.emplace_back();
    if (k + 1 != data.trajectories.size() || t != data.trajectories.back().size()) {
      throw Error("trajectory csv: rows out of order");
    }
    std::vector<Vec2> slot(data.num_users);
    for (std::size_t u = 0; u < data.num_users; ++u) slot[u] = {vals[2 + 2 * u], vals[3 + 2 * u]};
    data.trajectories.back().push_back(std::move(slot));
  }
  return data;
}

}  // namespace dnt::mobility
