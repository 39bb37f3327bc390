#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dnt {

/// Hard error raised on violated preconditions (shape mismatches, invalid
/// probability vectors, non-finite gradients).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected experiment configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training blew up (loss above the guard or non-finite). Exit code 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double squared_distance(Vec2 a, Vec2 b);
double distance(Vec2 a, Vec2 b);

/// Seeded random stream. Wraps mt19937_64 (whose output sequence is fixed by
/// the standard) and draws variates with hand-written transforms so results
/// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Unit-mean exponential variate.
  double exponential();

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream from a master seed, a lane name and an
/// optional index (episode number, trajectory number, ...). Lanes with
/// different names never share state, so e.g. exploration draws cannot
/// perturb user mobility.
Rng derive_stream(std::uint64_t master_seed, std::string_view lane,
                  std::uint64_t index = 0);

/// Shortest decimal string that parses back to exactly the same double.
std::string format_real(double value);

}  // namespace dnt
