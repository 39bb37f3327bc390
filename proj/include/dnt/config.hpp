#pragma once

// Experiment configuration: a flat `key = value` text file with `#`
// comments. Unknown keys and malformed values are ConfigErrors.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dnt/mobility.hpp"
#include "dnt/radio.hpp"

namespace dnt {

enum class MobilityKind { uniform, drift };
enum class PredictorKind { gru, persistence };

struct ExperimentConfig {
  // Network.
  std::size_t num_users = 12;  // U
  radio::Topology topology = radio::Topology::paper_default();
  radio::RadioParams radio;
  std::size_t allocator_rounds = 1;

  // Mobility.
  double step = 1.0;  // delta l
  MobilityKind mobility = MobilityKind::uniform;
  double drift_bias = 0.6;
  mobility::Arena arena;

  // Predictor.
  PredictorKind predictor = PredictorKind::gru;
  std::string predictor_checkpoint;  // empty: train in place when needed
  std::size_t predictor_hidden = 128;  // N^h
  std::size_t window = 5;              // K
  double predictor_lr = 1e-3;          // lambda_G
  std::size_t predictor_batch = 32;
  std::size_t predictor_epochs = 50;
  std::size_t num_trajectories = 2000;
  std::size_t trajectory_length = 30;

  // Learning.
  std::size_t q_hidden = 128;  // theta^h
  double q_lr = 1e-4;          // lambda_Q
  double gamma = 0.2;          // gamma
  std::size_t epochs = 75;     // G
  std::size_t horizon = 30;    // T, also D (one episode per epoch)
  std::size_t batch_size = 64;   // |D_g|
  std::size_t replay_capacity = 10000;
  std::size_t target_period = 10;  // C
  std::size_t train_steps_per_epoch = 1;
  double explore_start = 0.9;
  double explore_end = 0.05;
  double explore_fraction = 0.6;

  // Reward.
  double epsilon = 0.3;  // weight of the rate term
  double rho = -5.0;     // multi-serve penalty

  // Runs.
  std::uint64_t seed = 1;
  std::size_t eval_episodes = 20;
  std::vector<double> sweep_epsilon = {0.25, 0.3, 0.8};
  std::vector<std::size_t> sweep_users = {6, 9, 12};
  std::size_t sweep_seeds = 1;

  /// Rejects inconsistent settings with ConfigError.
  void validate() const;
  std::vector<mobility::MobilityProfile> profiles() const;
};

/// `paper-text` (U = 12, the default) or `paper-table2` (U = 10).
ExperimentConfig preset(const std::string& name);

/// Parses on top of `base`. A `preset = <name>` line resets to that preset
/// and must come first.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path);

/// Every key in canonical order; round-trips through parse_config.
std::string dump_config(const ExperimentConfig& config);

}  // namespace dnt
