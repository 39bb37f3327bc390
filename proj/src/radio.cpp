#include "dnt/radio.hpp"

#include <cmath>
#include <limits>

namespace dnt::radio {

namespace {
constexpr double kMinNorm = 1e-6;
}

Topology Topology::paper_default() {
  return {{{-100.0, 0.0}, {0.0, 0.0}, {100.0, 0.0}}, {0.0, 50.0}, 60.0};
}

bool Topology::covers(std::size_t bs, Vec2 p) const {
  return distance(p, bs_positions.at(bs)) <= coverage_radius;
}

void Topology::validate() const {
  if (bs_positions.empty()) throw ConfigError("topology: at least one BS required");
  if (!(coverage_radius > 0.0)) throw ConfigError("topology: coverage radius must be positive");
}

void RadioParams::validate() const {
  if (!(bandwidth > 0.0) || !(power > 0.0) || !(noise_psd > 0.0) || !(payload > 0.0) ||
      !(delay_cap > 0.0) || num_rbs == 0) {
    throw ConfigError("radio parameters must all be positive");
  }
}

FadingDraw FadingDraw::constant(std::size_t num_users, std::size_t num_bs, double value) {
  FadingDraw f;
  f.num_users_ = num_users;
  f.num_bs_ = num_bs;
  f.user_.assign(num_users * num_bs, value);
  f.cloud_.assign(num_bs, value);
  return f;
}

FadingDraw FadingDraw::sample(std::size_t num_users, std::size_t num_bs, Rng& rng) {
  FadingDraw f = constant(num_users, num_bs, 0.0);
  for (double& o : f.user_) o = rng.exponential();
  for (double& o : f.cloud_) o = rng.exponential();
  return f;
}

void FadingDraw::set_user(std::size_t u, std::size_t m, double o) {
  if (!(o >= 0.0) || !std::isfinite(o)) throw Error("fading must be finite and nonnegative");
  user_.at(u * num_bs_ + m) = o;
}

void FadingDraw::set_cloud(std::size_t m, double o) {
  if (!(o >= 0.0) || !std::isfinite(o)) throw Error("fading must be finite and nonnegative");
  cloud_.at(m) = o;
}

Allocation::Allocation(std::size_t num_bs, std::size_t num_users, std::size_t num_rbs)
    : num_bs_(num_bs),
      num_users_(num_users),
      num_rbs_(num_rbs),
      x_(num_bs * num_users * num_rbs, 0),
      y_(num_bs * num_rbs, 0) {}

void Allocation::set_x(std::size_t m, std::size_t u, std::size_t n, std::uint8_t v) {
  if (m >= num_bs_ || u >= num_users_ || n >= num_rbs_) throw Error("Allocation: index out of range");
  x_[(m * num_users_ + u) * num_rbs_ + n] = v;
}

void Allocation::set_y(std::size_t m, std::size_t n, std::uint8_t v) {
  if (m >= num_bs_ || n >= num_rbs_) throw Error("Allocation: index out of range");
  y_[m * num_rbs_ + n] = v;
}

void Allocation::clear_users(std::size_t m) {
  auto first = x_.begin() + static_cast<std::ptrdiff_t>(m * num_users_ * num_rbs_);
  std::fill(first, first + static_cast<std::ptrdiff_t>(num_users_ * num_rbs_), 0);
}

std::optional<std::size_t> Allocation::uplink_rb(std::size_t m) const {
  for (std::size_t n = 0; n < num_rbs_; ++n) {
    if (y(m, n) != 0) return n;
  }
  return std::nullopt;
}

bool Allocation::rb_busy(std::size_t m, std::size_t n) const {
  if (y(m, n) != 0) return true;
  for (std::size_t u = 0; u < num_users_; ++u) {
    if (x(m, u, n) != 0) return true;
  }
  return false;
}

double channel_gain(Vec2 target, Vec2 bs, double fading, PathlossMode mode) {
  const double norm = std::max(distance(target, bs), kMinNorm);
  // d = sqrt(norm) so d^-2 = 1 / norm.
  return mode == PathlossMode::paper ? fading / norm : fading / (norm * norm);
}

bool distance_clamped(Vec2 target, Vec2 bs) { return distance(target, bs) < kMinNorm; }

double user_gain(const RadioEnv& env, std::size_t u, std::size_t m) {
  return channel_gain(env.users[u], env.topology.bs_positions[m], env.fading.user(u, m),
                      env.params.pathloss);
}

double cloud_gain(const RadioEnv& env, std::size_t m) {
  return channel_gain(env.topology.cloud_position, env.topology.bs_positions[m],
                      env.fading.cloud(m), env.params.pathloss);
}

double downlink_interference(const RadioEnv& env, const Allocation& alloc, std::size_t user,
                             std::size_t serving_bs, std::size_t rb) {
  const double p = env.params.power;
  double total = 0.0;
  for (std::size_t j = 0; j < alloc.num_bs(); ++j) {
    if (j == serving_bs) continue;
    // Gain from interferer j toward the victim user, with the victim's fading.
    const double g = user_gain(env, user, j);
    for (std::size_t i = 0; i < alloc.num_users(); ++i) {
      if (i != user && alloc.x(j, i, rb) != 0) total += p * g;
    }
    if (alloc.y(j, rb) != 0) total += p * g;
  }
  return total;
}

double uplink_interference(const RadioEnv& env, const Allocation& alloc, std::size_t bs,
                           std::size_t rb) {
  const double p = env.params.power;
  double total = 0.0;
  for (std::size_t j = 0; j < alloc.num_bs(); ++j) {
    if (j == bs) continue;
    const double g = cloud_gain(env, j);
    for (std::size_t i = 0; i < alloc.num_users(); ++i) {
      if (alloc.x(j, i, rb) != 0) total += p * g;
    }
    if (alloc.y(j, rb) != 0) total += p * g;
  }
  return total;
}

namespace {
double shannon(const RadioParams& prm, double gain, double interference) {
  const double noise = prm.bandwidth * prm.noise_psd;
  return prm.bandwidth * std::log2(1.0 + prm.power * gain / (interference + noise));
}
}  // namespace

double downlink_rate_on_rb(const RadioEnv& env, const Allocation& alloc, std::size_t user,
                           std::size_t bs, std::size_t rb) {
  return shannon(env.params, user_gain(env, user, bs),
                 downlink_interference(env, alloc, user, bs, rb));
}

double uplink_rate_on_rb(const RadioEnv& env, const Allocation& alloc, std::size_t bs,
                         std::size_t rb) {
  return shannon(env.params, cloud_gain(env, bs), uplink_interference(env, alloc, bs, rb));
}

double downlink_rate(const RadioEnv& env, const Allocation& alloc, std::size_t user,
                     std::size_t bs) {
  double rate = 0.0;
  for (std::size_t n = 0; n < alloc.num_rbs(); ++n) {
    if (alloc.x(bs, user, n) != 0) rate += downlink_rate_on_rb(env, alloc, user, bs, n);
  }
  return rate;
}

double uplink_rate(const RadioEnv& env, const Allocation& alloc, std::size_t bs) {
  double rate = 0.0;
  for (std::size_t n = 0; n < alloc.num_rbs(); ++n) {
    if (alloc.y(bs, n) != 0) rate += uplink_rate_on_rb(env, alloc, bs, n);
  }
  return rate;
}

double uplink_delay(const RadioEnv& env, const Allocation& alloc, std::size_t bs) {
  const double rate = uplink_rate(env, alloc, bs);
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  return env.params.payload / rate;
}

std::vector<double> user_rates(const RadioEnv& env, const Allocation& alloc) {
  std::vector<double> rates(alloc.num_users(), 0.0);
  for (std::size_t u = 0; u < alloc.num_users(); ++u) {
    for (std::size_t m = 0; m < alloc.num_bs(); ++m) rates[u] += downlink_rate(env, alloc, u, m);
  }
  return rates;
}

std::string to_string(Constraint c) {
  switch (c) {
    case Constraint::c8a_x_binary: return "8a";
    case Constraint::c8b_user_single_grant: return "8b";
    case Constraint::c8c_rb_single_user: return "8c";
    case Constraint::c8d_y_binary: return "8d";
    case Constraint::c8e_single_uplink: return "8e";
    case Constraint::c8f_rb_user_or_uplink: return "8f";
    case Constraint::c8g_delay_cap: return "8g";
  }
  return "?";
}

std::vector<Violation> audit_allocation(const Allocation& alloc) {
  std::vector<Violation> out;
  const std::size_t M = alloc.num_bs(), U = alloc.num_users(), N = alloc.num_rbs();
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t u = 0; u < U; ++u) {
      for (std::size_t n = 0; n < N; ++n) {
        if (alloc.x(m, u, n) > 1) out.push_back({Constraint::c8a_x_binary, m, u});
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      if (alloc.y(m, n) > 1) out.push_back({Constraint::c8d_y_binary, m, n});
    }
  }
  for (std::size_t u = 0; u < U; ++u) {
    unsigned grants = 0;
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t n = 0; n < N; ++n) grants += alloc.x(m, u, n);
    }
    if (grants > 1) out.push_back({Constraint::c8b_user_single_grant, 0, u});
  }
  for (std::size_t m = 0; m < M; ++m) {
    unsigned uplinks = 0;
    for (std::size_t n = 0; n < N; ++n) {
      unsigned users = 0;
      for (std::size_t u = 0; u < U; ++u) users += alloc.x(m, u, n);
      if (users > 1) out.push_back({Constraint::c8c_rb_single_user, m, n});
      if (users + alloc.y(m, n) > 1) out.push_back({Constraint::c8f_rb_user_or_uplink, m, n});
      uplinks += alloc.y(m, n);
    }
    if (uplinks > 1) out.push_back({Constraint::c8e_single_uplink, m, 0});
  }
  return out;
}

}  // namespace dnt::radio
