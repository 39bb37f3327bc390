#pragma once

// Channel gains, SINR rates for downlink service and uplink twin sync,
// interference aggregation, uplink delay, and the allocation auditor.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnt/common.hpp"

namespace dnt::radio {

struct Topology {
  std::vector<Vec2> bs_positions;
  Vec2 cloud_position;
  double coverage_radius = 60.0;

  /// Three BSs at x = -100, 0, 100 on the y = 0 axis, cloud at (0, 50),
  /// coverage radius 60.
  static Topology paper_default();

  std::size_t num_bs() const { return bs_positions.size(); }
  /// Coverage disc membership, boundary inclusive.
  bool covers(std::size_t bs, Vec2 p) const;
  void validate() const;
};

/// `paper` (default): gain = o * d^-2 with d = sqrt(||.||), i.e. o / ||.||.
/// `squared`: the conventional o / ||.||^2.
enum class PathlossMode { paper, squared };

struct RadioParams {
  double bandwidth = 1.0;   // B
  double power = 1.0;       // P
  double noise_psd = 1e-5;  // N_0
  double payload = 1.0;     // D_m
  double delay_cap = 1.0;   // alpha
  std::size_t num_rbs = 12; // N
  PathlossMode pathloss = PathlossMode::paper;

  void validate() const;
};

/// Fading coefficients for one slot: one per (user, BS) link and one per
/// (cloud, BS) link.
class FadingDraw {
 public:
  FadingDraw() = default;
  /// All coefficients equal to `value`.
  static FadingDraw constant(std::size_t num_users, std::size_t num_bs, double value = 1.0);
  /// i.i.d. unit-mean exponential coefficients.
  static FadingDraw sample(std::size_t num_users, std::size_t num_bs, Rng& rng);

  double user(std::size_t u, std::size_t m) const { return user_[u * num_bs_ + m]; }
  double cloud(std::size_t m) const { return cloud_[m]; }
  void set_user(std::size_t u, std::size_t m, double o);
  void set_cloud(std::size_t m, double o);

  std::size_t num_users() const { return num_users_; }
  std::size_t num_bs() const { return num_bs_; }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_bs_ = 0;
  std::vector<double> user_;
  std::vector<double> cloud_;
};

/// Per-slot RB usage: x[m][u][n] downlink grants and y[m][n] uplink flags.
class Allocation {
 public:
  Allocation() = default;
  Allocation(std::size_t num_bs, std::size_t num_users, std::size_t num_rbs);

  std::size_t num_bs() const { return num_bs_; }
  std::size_t num_users() const { return num_users_; }
  std::size_t num_rbs() const { return num_rbs_; }

  std::uint8_t x(std::size_t m, std::size_t u, std::size_t n) const {
    return x_[(m * num_users_ + u) * num_rbs_ + n];
  }
  std::uint8_t y(std::size_t m, std::size_t n) const { return y_[m * num_rbs_ + n]; }
  void set_x(std::size_t m, std::size_t u, std::size_t n, std::uint8_t v);
  void set_y(std::size_t m, std::size_t n, std::uint8_t v);

  /// Clears every downlink grant of BS m (uplink flags untouched).
  void clear_users(std::size_t m);

  /// First RB of BS m with y = 1.
  std::optional<std::size_t> uplink_rb(std::size_t m) const;
  /// Whether RB n of BS m carries anything (a user or the uplink).
  bool rb_busy(std::size_t m, std::size_t n) const;

 private:
  std::size_t num_bs_ = 0;
  std::size_t num_users_ = 0;
  std::size_t num_rbs_ = 0;
  std::vector<std::uint8_t> x_;
  std::vector<std::uint8_t> y_;
};

/// Everything a rate evaluation reads for one slot. Non-owning.
struct RadioEnv {
  const Topology& topology;
  const RadioParams& params;
  const FadingDraw& fading;
  std::span<const Vec2> users;
};

/// Gain between a point and a BS for fading coefficient o. Norms below 1e-6
/// are clamped to 1e-6.
double channel_gain(Vec2 target, Vec2 bs, double fading, PathlossMode mode);
/// True when the clamp in channel_gain is active.
bool distance_clamped(Vec2 target, Vec2 bs);

/// h_m(l_u) including the slot's fading for link (u, m).
double user_gain(const RadioEnv& env, std::size_t u, std::size_t m);
/// h_m(l_C) including the slot's fading for the (cloud, m) link.
double cloud_gain(const RadioEnv& env, std::size_t m);

/// Interference seen by `user` served by `serving_bs` on `rb`: every other
/// BS's grants to users other than `user` plus every other BS's uplink on
/// that RB, evaluated at the user's position.
double downlink_interference(const RadioEnv& env, const Allocation& alloc,
                             std::size_t user, std::size_t serving_bs, std::size_t rb);

/// Interference at the cloud for BS `bs` uplinking on `rb`: every other BS's
/// grants (all users) and uplinks on that RB, evaluated at the cloud.
double uplink_interference(const RadioEnv& env, const Allocation& alloc,
                           std::size_t bs, std::size_t rb);

/// B log2(1 + P h / (I + B N0)) for `user` on `rb` of `bs`, ignoring whether
/// the RB is actually granted.
double downlink_rate_on_rb(const RadioEnv& env, const Allocation& alloc,
                           std::size_t user, std::size_t bs, std::size_t rb);
double uplink_rate_on_rb(const RadioEnv& env, const Allocation& alloc,
                         std::size_t bs, std::size_t rb);

/// Sum over granted RBs of downlink_rate_on_rb; 0 when nothing is granted.
double downlink_rate(const RadioEnv& env, const Allocation& alloc,
                     std::size_t user, std::size_t bs);
/// Sum over uplink RBs of uplink_rate_on_rb; 0 when y is all zero.
double uplink_rate(const RadioEnv& env, const Allocation& alloc, std::size_t bs);
/// payload / uplink_rate, +infinity when the rate is 0.
double uplink_delay(const RadioEnv& env, const Allocation& alloc, std::size_t bs);

/// Rate of every user from whichever BS grants it RBs (0 if none).
std::vector<double> user_rates(const RadioEnv& env, const Allocation& alloc);

/// Constraint identifiers of the allocation problem.
enum class Constraint {
  c8a_x_binary,
  c8b_user_single_grant,
  c8c_rb_single_user,
  c8d_y_binary,
  c8e_single_uplink,
  c8f_rb_user_or_uplink,
  c8g_delay_cap,
};

std::string to_string(Constraint c);

struct Violation {
  Constraint constraint;
  std::size_t bs = 0;
  std::size_t index = 0;  // user or RB, depending on the constraint

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Checks 8a-8f on an allocation. Pure; returns every violation found.
std::vector<Violation> audit_allocation(const Allocation& alloc);

}  // namespace dnt::radio
