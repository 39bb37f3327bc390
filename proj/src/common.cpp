#include "dnt/common.hpp"

#include <charconv>
#include <cmath>
#include <limits>

namespace dnt {

double squared_distance(Vec2 a, Vec2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

double distance(Vec2 a, Vec2 b) { return std::sqrt(squared_distance(a, b)); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw Error("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return draw % n;
}

double Rng::exponential() { return -std::log1p(-uniform()); }

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng derive_stream(std::uint64_t master_seed, std::string_view lane,
                  std::uint64_t index) {
  // FNV-1a over the lane name.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : lane) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(mix64(mix64(master_seed) ^ mix64(h) ^ mix64(index + 0x5851f42d4c957f2dULL)));
}

std::string format_real(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_real: conversion failed");
  return std::string(buf, end);
}

}  // namespace dnt
