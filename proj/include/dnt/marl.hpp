#pragma once

// Per-BS recurrent Q-networks, action encoding and masking, epsilon-greedy
// behavior, episode replay, target networks, and the value-decomposed (VDN)
// and independent (IQL) TD updates.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "dnt/nncore.hpp"
#include "dnt/radio.hpp"
#include "dnt/twin.hpp"

namespace dnt::marl {

/// Per-BS action: uplink flag plus the association bit-vector z.
struct ActionCode {
  bool sync = false;
  std::uint32_t assoc = 0;  // bit u set = BS associates user u

  /// Head row: assoc in the high bits, sync in bit 0.
  std::size_t index() const { return (static_cast<std::size_t>(assoc) << 1) | (sync ? 1U : 0U); }
  static ActionCode from_index(std::size_t index);

  friend bool operator==(const ActionCode&, const ActionCode&) = default;
};

/// 2^(U+1). U is limited to 20.
std::size_t action_space_size(std::size_t num_users);

/// Bit u set when `bs` covers user u.
std::uint32_t coverage_mask(std::size_t bs, const twin::PhysicalState& phys,
                            const radio::Topology& topology);

/// assoc within the mask and popcount(assoc) + sync <= num_rbs.
bool is_valid(ActionCode a, std::uint32_t mask, std::size_t num_rbs);

/// Every valid action index for a coverage mask, ascending.
std::vector<std::size_t> valid_actions(std::uint32_t mask, std::size_t num_rbs);

/// Scale applied to absolute positions in agent observations.
inline constexpr double kStateScale = 1.0 / 150.0;

/// 3U reals: scaled (x, y) of covered users in slots (2u, 2u+1), zeros for
/// uncovered users, then the U-bit coverage mask.
nn::Vector encode_local_state(std::size_t bs, const twin::PhysicalState& phys,
                              const radio::Topology& topology);

struct AgentNet {
  nn::GruCellParams gru;
  nn::Matrix head;     // |A| x theta_h
  nn::Vector hidden;   // episode-scoped recurrent state

  static AgentNet random(std::size_t input_dim, std::size_t hidden_dim,
                         std::size_t num_actions, Rng& rng);
  static AgentNet zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_actions);

  void reset_hidden();
  /// Advances the hidden state by one observation and returns all Q values.
  nn::Vector q_values(const nn::Vector& encoded);
  /// Same, but only evaluates the listed head rows.
  std::vector<double> q_values(const nn::Vector& encoded, std::span<const std::size_t> actions);

  void validate() const;
};

/// With probability explore_eps a uniform valid action, otherwise the valid
/// action with the largest Q (lowest index on ties). Advances the hidden
/// state either way.
ActionCode act_epsilon_greedy(AgentNet& net, const nn::Vector& encoded,
                              std::span<const std::size_t> valid, double explore_eps, Rng& rng);

/// Sum of the per-agent chosen-action Q values.
double q_tot(std::span<const double> per_agent_q);

/// One agent's record for one slot.
struct AgentSlot {
  nn::Vector obs;
  std::uint32_t mask = 0;
  ActionCode action;
  double local_reward = 0.0;
};

/// A whole episode, kept intact so recurrent hidden states can be rebuilt
/// from its first slot.
struct Episode {
  std::vector<std::vector<AgentSlot>> slots;        // [t][m]
  std::vector<double> team_reward;                  // [t]
  std::vector<twin::PhysicalState> global_states;   // [t], plus one trailing next state
  std::size_t num_rbs = 0;                          // RB budget for action validity; 0 = unbounded

  std::size_t length() const { return slots.size(); }
  std::size_t num_agents() const { return slots.empty() ? 0 : slots.front().size(); }
};

/// Flat view of one slot of an episode.
struct Transition {
  twin::PhysicalState global_state;
  std::vector<ActionCode> joint_action;
  double reward = 0.0;
  twin::PhysicalState next_global_state;
  std::vector<nn::Vector> local_views;
  std::vector<std::uint32_t> masks;
  bool terminal = false;
};

Transition transition_at(const Episode& episode, std::size_t slot);

struct TransitionRef {
  std::size_t episode = 0;  // index into ReplayMemory::episodes()
  std::size_t slot = 0;
};

/// Episode store with a transition-count capacity. Oldest episodes are
/// evicted first.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Episode episode);
  /// `count` transitions drawn uniformly with replacement.
  std::vector<TransitionRef> sample(std::size_t count, Rng& rng) const;

  std::size_t size() const { return transitions_; }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Episode>& episodes() const { return episodes_; }

 private:
  std::size_t capacity_;
  std::size_t transitions_ = 0;
  std::deque<Episode> episodes_;
};

/// Sampled transitions with pointers to their episodes.
struct TrainBatch {
  std::vector<const Episode*> episodes;                       // distinct episodes
  std::vector<std::pair<std::size_t, std::size_t>> items;     // (index into episodes, slot)

  static TrainBatch from_refs(const ReplayMemory& memory, std::span<const TransitionRef> refs);
};

struct AgentGradients {
  nn::GruCellParams cell;
  nn::Matrix head;
};

enum class Credit {
  team,   // VDN: shared TD error on Q_tot against the team reward
  local,  // IQL: each agent's own TD error against its local reward
};

struct LossGradients {
  double loss = 0.0;
  std::vector<AgentGradients> grads;  // d loss / d theta_m
  std::vector<double> targets;        // team targets (team credit) per item
};

/// TD loss and exact gradients. Team credit:
///   y = r + gamma * sum_m max_{a valid} Q~_m(next),  loss = mean (y - Q_tot)^2.
/// Local credit: the same per agent with r^m, loss = mean over agents.
/// Terminal slots drop the bootstrap term. Hidden states are rebuilt from
/// each episode's first slot.
LossGradients td_loss_gradients(const std::vector<AgentNet>& nets,
                                const std::vector<AgentNet>& targets,
                                const TrainBatch& batch, double gamma, Credit credit);

/// Team TD target of one transition.
double td_target(const Episode& episode, std::size_t slot,
                 const std::vector<AgentNet>& targets, double gamma);

double vdn_train_step(std::vector<AgentNet>& nets, const std::vector<AgentNet>& targets,
                      const TrainBatch& batch, double lr, double gamma);
double iql_train_step(std::vector<AgentNet>& nets, const std::vector<AgentNet>& targets,
                      const TrainBatch& batch, double lr, double gamma);

/// Hard-copies online parameters into the targets when `epoch + 1` is a
/// multiple of `period`. Returns whether a copy happened.
bool sync_targets(const std::vector<AgentNet>& nets, std::vector<AgentNet>& targets,
                  std::size_t epoch, std::size_t period);

/// Local rewards for independent learners. BS m is charged xi_u * rho for
/// every over-served user it claims; otherwise it earns eps * (rates of its
/// associated users) - (1 - eps)/U * (squared twin error over its covered
/// users).
std::vector<double> local_rewards(const twin::PhysicalState& phys, const twin::TwinState& twin,
                                  std::span<const double> rates,
                                  std::span<const ActionCode> joint,
                                  std::span<const std::uint32_t> masks, double epsilon,
                                  double rho);

/// Per-user association counts xi_u.
std::vector<std::size_t> association_counts(std::span<const ActionCode> joint,
                                            std::size_t num_users);

/// Linear decay from `start` to `end` over the first `fraction` of epochs.
double exploration_rate(std::size_t epoch, std::size_t total_epochs, double start = 0.9,
                        double end = 0.05, double fraction = 0.6);

void save_agents(const std::string& path, const std::vector<AgentNet>& nets);
std::vector<AgentNet> load_agents(const std::string& path);

}  // namespace dnt::marl
