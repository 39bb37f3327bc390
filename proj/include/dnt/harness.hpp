#pragma once

// Environment loop, training and evaluation runs, sweeps, constraint
// auditing, and the trace/curve/summary writers.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dnt/allocator.hpp"
#include "dnt/config.hpp"
#include "dnt/marl.hpp"
#include "dnt/predictor.hpp"

namespace dnt::harness {

/// How BSs pick actions.
///   learned:  epsilon-greedy on the Q networks
///   all_sync / no_sync: every covered user goes to its nearest BS, with or
///             without the uplink
///   random:   uniform over each BS's valid actions
enum class Policy { learned, all_sync, no_sync, random };

enum class Method { vdn, iql };

std::string to_string(Policy p);
std::string to_string(Method m);

struct SlotRecord {
  std::size_t episode = 0;
  std::size_t slot = 0;
  std::vector<marl::ActionCode> actions;  // per BS
  std::vector<std::uint32_t> masks;       // per BS coverage
  std::vector<bool> sync_success;         // per BS
  std::vector<double> uplink_delay;       // per BS, +inf without a successful sync
  std::vector<double> rates;              // per user
  twin::PhysicalState physical;
  std::vector<Vec2> twin;
  double total_rate = 0.0;
  double sync_error = 0.0;
  double reward = 0.0;                    // team reward
  std::vector<double> local_rewards;      // per BS
  std::vector<std::string> events;        // allocator events, e.g. delay-failed syncs
  std::vector<radio::Violation> violations;

  std::size_t syncs() const;
};

struct EpisodeResult {
  std::vector<SlotRecord> records;
  marl::Episode episode;  // replay form
  double mean_reward = 0.0;
  double mean_sync_error = 0.0;
  double mean_total_rate = 0.0;
};

/// Everything run_episode needs besides the config.
struct EpisodeInputs {
  std::vector<mobility::MobilityProfile> profiles;
  const predictor::Forecaster* forecaster = nullptr;
  Policy policy = Policy::learned;
  std::vector<marl::AgentNet>* nets = nullptr;  // learned policy only
  double explore_eps = 0.0;
  Rng* agent_rng = nullptr;  // exploration and random-policy draws
};

/// One episode of `config.horizon` slots. Positions and fading come from the
/// mobility and fading lanes of (config.seed, episode_index), so every
/// policy sees the same world for the same index.
EpisodeResult run_episode(const ExperimentConfig& config, const EpisodeInputs& inputs,
                          std::uint64_t episode_index);

/// Nearest-covering-BS association (ties to the lower index), truncated to
/// the RB budget by distance.
marl::ActionCode scripted_action(std::size_t bs, const twin::PhysicalState& phys,
                                 const radio::Topology& topology, std::size_t num_rbs, bool sync);

/// Problem constraints on one concrete slot: 8a-8f from the allocation and
/// 8g from the realized uplink delays.
std::vector<radio::Violation> audit_constraints(const radio::RadioEnv& env,
                                                const radio::Allocation& alloc);

// ---------------------------------------------------------------- training

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double explore_eps = 0.0;
};

struct TrainOutcome {
  std::vector<marl::AgentNet> nets;
  std::vector<EpochStats> curve;
};

/// Forecaster per the config: persistence, a loaded checkpoint, or a GRU
/// trained in place on a freshly generated dataset.
std::unique_ptr<predictor::Forecaster> make_forecaster(const ExperimentConfig& config);

struct PredictorRun {
  predictor::PredictorModel model;
  std::vector<double> epoch_loss;
  predictor::MseReport holdout;
  predictor::MseReport persistence;
};

/// Generates the dataset, trains on 80% of the trajectories and scores the
/// remaining 20% against the persistence baseline.
PredictorRun train_predictor(const ExperimentConfig& config);

/// Generates the predictor dataset from the config's lanes.
mobility::TrajectoryDataset generate_dataset(const ExperimentConfig& config);

/// G epochs of collect-then-train. Target networks are copied every C epochs.
TrainOutcome train(const ExperimentConfig& config, Method method,
                   const predictor::Forecaster& forecaster);

struct EvalSummary {
  std::string policy;
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  double mean_sync_error = 0.0;
  double mean_total_rate = 0.0;
  std::vector<std::size_t> sync_histogram;  // slots with k = 0..M syncs
  std::vector<SlotRecord> records;
};

/// Greedy rollouts over `config.eval_episodes` evaluation episodes. These
/// use episode indices disjoint from the training ones.
EvalSummary evaluate(const ExperimentConfig& config, Policy policy,
                     std::vector<marl::AgentNet>* nets, const predictor::Forecaster& forecaster);

inline constexpr std::uint64_t kEvalEpisodeBase = std::uint64_t{1} << 32;

enum class SweepAxis { epsilon, users };

struct SweepRow {
  double value = 0.0;
  std::string method;
  double mean_total_rate = 0.0;
  double mean_sync_error = 0.0;
  double mean_reward = 0.0;
};

/// Retrains VDN and IQL at every grid point on `sweep_seeds` matched seeds
/// (seed, seed + 1, ...) and reports evaluation means.
std::vector<SweepRow> sweep(const ExperimentConfig& config, SweepAxis axis);

// ---------------------------------------------------------------- outputs

/// Header: episode,slot,actions,masks,sync_success,uplink_delay,rates,
/// physical,twin,total_rate,sync_error,reward,events. List-valued fields are
/// ';'-separated; an action is `sync:assoc` with assoc as a decimal bitmask,
/// a position is `x:y`.
void write_trace_csv(std::ostream& out, const std::vector<SlotRecord>& records);
/// Header: epoch,loss,mean_reward,eps.
void write_curve_csv(std::ostream& out, const std::vector<EpochStats>& curve);
/// Header: axis,value,method,mean_rate,mean_dnt_error,mean_reward.
void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);
std::string summary_json(const EvalSummary& summary, const ExperimentConfig& config);

}  // namespace dnt::harness
