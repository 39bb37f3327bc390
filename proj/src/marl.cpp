#include "dnt/marl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>

namespace dnt::marl {

ActionCode ActionCode::from_index(std::size_t index) {
  return {(index & 1U) != 0, static_cast<std::uint32_t>(index >> 1)};
}

std::size_t action_space_size(std::size_t num_users) {
  if (num_users > 20) throw Error("action space: at most 20 users supported");
  return std::size_t{1} << (num_users + 1);
}

std::uint32_t coverage_mask(std::size_t bs, const twin::PhysicalState& phys,
                            const radio::Topology& topology) {
  std::uint32_t mask = 0;
  for (std::size_t u = 0; u < phys.size(); ++u) {
    if (topology.covers(bs, phys[u])) mask |= 1U << u;
  }
  return mask;
}

bool is_valid(ActionCode a, std::uint32_t mask, std::size_t num_rbs) {
  if ((a.assoc & ~mask) != 0) return false;
  return static_cast<std::size_t>(std::popcount(a.assoc)) + (a.sync ? 1U : 0U) <= num_rbs;
}

std::vector<std::size_t> valid_actions(std::uint32_t mask, std::size_t num_rbs) {
  std::vector<std::size_t> out;
  // Enumerate submasks of `mask` in increasing numeric order.
  std::uint32_t sub = 0;
  while (true) {
    for (bool sync : {false, true}) {
      const ActionCode a{sync, sub};
      if (is_valid(a, mask, num_rbs)) out.push_back(a.index());
    }
    if (sub == mask) break;
    sub = ((sub | ~mask) + 1) & mask;
  }
  return out;
}

nn::Vector encode_local_state(std::size_t bs, const twin::PhysicalState& phys,
                              const radio::Topology& topology) {
  const auto U = static_cast<Eigen::Index>(phys.size());
  nn::Vector v = nn::Vector::Zero(3 * U);
  for (Eigen::Index u = 0; u < U; ++u) {
    const Vec2 p = phys[static_cast<std::size_t>(u)];
    if (!topology.covers(bs, p)) continue;
    v[2 * u] = p.x * kStateScale;
    v[2 * u + 1] = p.y * kStateScale;
    v[2 * U + u] = 1.0;
  }
  return v;
}

AgentNet AgentNet::random(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_actions,
                          Rng& rng) {
  AgentNet net;
  net.gru = nn::GruCellParams::random(input_dim, hidden_dim, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  net.head.resize(static_cast<Eigen::Index>(num_actions), static_cast<Eigen::Index>(hidden_dim));
  for (Eigen::Index i = 0; i < net.head.size(); ++i) net.head.data()[i] = rng.uniform(-bound, bound);
  net.reset_hidden();
  return net;
}

AgentNet AgentNet::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_actions) {
  AgentNet net;
  net.gru = nn::GruCellParams::zeros(input_dim, hidden_dim);
  net.head = nn::Matrix::Zero(static_cast<Eigen::Index>(num_actions),
                              static_cast<Eigen::Index>(hidden_dim));
  net.reset_hidden();
  return net;
}

void AgentNet::reset_hidden() {
  hidden = nn::Vector::Zero(static_cast<Eigen::Index>(gru.hidden_dim()));
}

void AgentNet::validate() const {
  gru.validate();
  if (head.cols() != static_cast<Eigen::Index>(gru.hidden_dim())) {
    throw Error("AgentNet: head does not match hidden dimension");
  }
}

nn::Vector AgentNet::q_values(const nn::Vector& encoded) {
  hidden = nn::gru_cell_forward(gru, encoded, hidden).hidden.col(0);
  return head * hidden;
}

std::vector<double> AgentNet::q_values(const nn::Vector& encoded,
                                       std::span<const std::size_t> actions) {
  hidden = nn::gru_cell_forward(gru, encoded, hidden).hidden.col(0);
  std::vector<double> q;
  q.reserve(actions.size());
  for (std::size_t a : actions) {
    if (a >= static_cast<std::size_t>(head.rows())) throw Error("q_values: action out of range");
    q.push_back(head.row(static_cast<Eigen::Index>(a)).dot(hidden));
  }
  return q;
}

ActionCode act_epsilon_greedy(AgentNet& net, const nn::Vector& encoded,
                              std::span<const std::size_t> valid, double explore_eps, Rng& rng) {
  if (valid.empty()) throw Error("act_epsilon_greedy: no valid action");
  const std::vector<double> q = net.q_values(encoded, valid);
  if (explore_eps > 0.0 && rng.uniform() < explore_eps) {
    return ActionCode::from_index(valid[rng.uniform_index(valid.size())]);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    // Strict comparison keeps the lowest index on ties (valid is ascending).
    if (q[i] > q[best]) best = i;
  }
  return ActionCode::from_index(valid[best]);
}

double q_tot(std::span<const double> per_agent_q) {
  double sum = 0.0;
  for (double q : per_agent_q) sum += q;
  return sum;
}

Transition transition_at(const Episode& episode, std::size_t slot) {
  if (slot >= episode.length()) throw Error("transition_at: slot out of range");
  Transition tr;
  tr.global_state = episode.global_states.at(slot);
  tr.next_global_state = episode.global_states.at(slot + 1);
  tr.reward = episode.team_reward.at(slot);
  tr.terminal = slot + 1 == episode.length();
  for (const AgentSlot& a : episode.slots[slot]) {
    tr.joint_action.push_back(a.action);
    tr.local_views.push_back(a.obs);
    tr.masks.push_back(a.mask);
  }
  return tr;
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error("ReplayMemory: capacity must be positive");
}

void ReplayMemory::push(Episode episode) {
  if (episode.length() == 0) return;
  transitions_ += episode.length();
  episodes_.push_back(std::move(episode));
  while (transitions_ > capacity_ && episodes_.size() > 1) {
    transitions_ -= episodes_.front().length();
    episodes_.pop_front();
  }
}

std::vector<TransitionRef> ReplayMemory::sample(std::size_t count, Rng& rng) const {
  if (transitions_ == 0) throw Error("ReplayMemory: sampling from an empty memory");
  std::vector<TransitionRef> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t k = rng.uniform_index(transitions_);
    std::size_t e = 0;
    while (k >= episodes_[e].length()) {
      k -= episodes_[e].length();
      ++e;
    }
    out.push_back({e, k});
  }
  return out;
}

TrainBatch TrainBatch::from_refs(const ReplayMemory& memory, std::span<const TransitionRef> refs) {
  TrainBatch batch;
  std::map<std::size_t, std::size_t> position;
  for (const TransitionRef& r : refs) {
    auto [it, inserted] = position.try_emplace(r.episode, batch.episodes.size());
    if (inserted) batch.episodes.push_back(&memory.episodes().at(r.episode));
    batch.items.emplace_back(it->second, r.slot);
  }
  return batch;
}

namespace {

/// Hidden states of one agent over the batch's episodes, one column per
/// episode. Steps past an episode's end see zero inputs and are never read.
struct AgentUnroll {
  nn::GruTape tape;
};

AgentUnroll unroll_agent(const nn::GruCellParams& gru, const TrainBatch& batch, std::size_t agent,
                         std::size_t steps) {
  const auto in = static_cast<Eigen::Index>(gru.input_dim());
  const auto E = static_cast<Eigen::Index>(batch.episodes.size());
  std::vector<nn::Batch> inputs(steps, nn::Batch::Zero(in, E));
  for (Eigen::Index e = 0; e < E; ++e) {
    const Episode& ep = *batch.episodes[static_cast<std::size_t>(e)];
    for (std::size_t t = 0; t < std::min(steps, ep.length()); ++t) {
      const nn::Vector& obs = ep.slots[t][agent].obs;
      if (obs.size() != in) throw Error("td_loss: observation size does not match network");
      inputs[t].col(e) = obs;
    }
  }
  return {nn::gru_unroll(gru, inputs)};
}

double max_valid_q(const AgentNet& net, const nn::Batch& hidden, Eigen::Index col,
                   std::uint32_t mask, std::size_t num_rbs) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a : valid_actions(mask, num_rbs)) {
    best = std::max(best, net.head.row(static_cast<Eigen::Index>(a)).dot(hidden.col(col)));
  }
  return best;
}

std::size_t rbs_bound(const Episode& ep) {
  return ep.num_rbs == 0 ? std::numeric_limits<std::size_t>::max() : ep.num_rbs;
}

}  // namespace

LossGradients td_loss_gradients(const std::vector<AgentNet>& nets,
                                const std::vector<AgentNet>& targets, const TrainBatch& batch,
                                double gamma, Credit credit) {
  if (batch.items.empty()) throw Error("td_loss: empty batch");
  if (nets.size() != targets.size() || nets.empty()) throw Error("td_loss: agent count mismatch");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("td_loss: gamma must lie in [0, 1)");
  const std::size_t M = nets.size();
  const std::size_t B = batch.items.size();

  std::size_t steps = 0;
  for (auto [e, t] : batch.items) {
    const Episode& ep = *batch.episodes[e];
    if (ep.num_agents() != M) throw Error("td_loss: episode agent count mismatch");
    if (t >= ep.length()) throw Error("td_loss: slot out of range");
    steps = std::max(steps, std::min(ep.length(), t + 2));
  }

  std::vector<AgentUnroll> online, target;
  online.reserve(M);
  target.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    nets[m].validate();
    online.push_back(unroll_agent(nets[m].gru, batch, m, steps));
    target.push_back(unroll_agent(targets[m].gru, batch, m, steps));
  }

  // q[m][b] and next_max[m][b] (0 at terminal slots).
  std::vector<std::vector<double>> q(M, std::vector<double>(B));
  std::vector<std::vector<double>> next_max(M, std::vector<double>(B, 0.0));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto [e, t] = batch.items[b];
      const Episode& ep = *batch.episodes[e];
      const auto col = static_cast<Eigen::Index>(e);
      const std::size_t a = ep.slots[t][m].action.index();
      q[m][b] = nets[m].head.row(static_cast<Eigen::Index>(a)).dot(online[m].tape.steps[t].hidden.col(col));
      if (t + 1 < ep.length()) {
        next_max[m][b] = max_valid_q(targets[m], target[m].tape.steps[t + 1].hidden, col,
                                     ep.slots[t + 1][m].mask, rbs_bound(ep));
      }
    }
  }

  LossGradients out;
  // dloss/dq[m][b]
  std::vector<std::vector<double>> dq(M, std::vector<double>(B, 0.0));
  const double inv_b = 1.0 / static_cast<double>(B);
  if (credit == Credit::team) {
    out.targets.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      const auto [e, t] = batch.items[b];
      double bootstrap = 0.0, qt = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        bootstrap += next_max[m][b];
        qt += q[m][b];
      }
      const double y = batch.episodes[e]->team_reward[t] + gamma * bootstrap;
      out.targets[b] = y;
      const double delta = y - qt;
      out.loss += delta * delta * inv_b;
      // Shared scalar error times each agent's own Q gradient.
      for (std::size_t m = 0; m < M; ++m) dq[m][b] = -2.0 * delta * inv_b;
    }
  } else {
    const double inv_m = 1.0 / static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t b = 0; b < B; ++b) {
        const auto [e, t] = batch.items[b];
        const double y = batch.episodes[e]->slots[t][m].local_reward + gamma * next_max[m][b];
        const double delta = y - q[m][b];
        out.loss += delta * delta * inv_b * inv_m;
        dq[m][b] = -2.0 * delta * inv_b * inv_m;
      }
    }
  }

  const auto E = static_cast<Eigen::Index>(batch.episodes.size());
  out.grads.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    const AgentNet& net = nets[m];
    const auto H = static_cast<Eigen::Index>(net.gru.hidden_dim());
    std::vector<nn::Batch> hidden_grads(steps);
    nn::Matrix head_grad = nn::Matrix::Zero(net.head.rows(), net.head.cols());
    for (std::size_t b = 0; b < B; ++b) {
      if (dq[m][b] == 0.0) continue;
      const auto [e, t] = batch.items[b];
      const auto a = static_cast<Eigen::Index>(batch.episodes[e]->slots[t][m].action.index());
      const auto col = static_cast<Eigen::Index>(e);
      if (hidden_grads[t].size() == 0) hidden_grads[t] = nn::Batch::Zero(H, E);
      hidden_grads[t].col(col) += dq[m][b] * net.head.row(a).transpose();
      head_grad.row(a) += dq[m][b] * online[m].tape.steps[t].hidden.col(col).transpose();
    }
    out.grads[m].cell = nn::gru_backward(online[m].tape, net.gru, hidden_grads);
    out.grads[m].head = std::move(head_grad);
  }
  if (!std::isfinite(out.loss)) throw DivergenceError("td_loss: non-finite loss");
  return out;
}

double td_target(const Episode& episode, std::size_t slot, const std::vector<AgentNet>& targets,
                 double gamma) {
  if (slot >= episode.length()) throw Error("td_target: slot out of range");
  double y = episode.team_reward[slot];
  if (slot + 1 == episode.length() || gamma == 0.0) return y;
  double bootstrap = 0.0;
  for (std::size_t m = 0; m < targets.size(); ++m) {
    AgentNet net = targets[m];
    net.reset_hidden();
    for (std::size_t t = 0; t <= slot; ++t) net.q_values(episode.slots[t][m].obs, {});
    const auto valid = valid_actions(episode.slots[slot + 1][m].mask, rbs_bound(episode));
    const auto qs = net.q_values(episode.slots[slot + 1][m].obs, valid);
    bootstrap += *std::max_element(qs.begin(), qs.end());
  }
  return y + gamma * bootstrap;
}

namespace {

void apply(std::vector<AgentNet>& nets, const LossGradients& g, double lr) {
  for (std::size_t m = 0; m < nets.size(); ++m) {
    auto params = nets[m].gru.matrices();
    const auto grads = std::as_const(g.grads[m].cell).matrices();
    for (std::size_t i = 0; i < params.size(); ++i) nn::sgd_apply(*params[i], *grads[i], lr);
    nn::sgd_apply(nets[m].head, g.grads[m].head, lr);
  }
}

}  // namespace

double vdn_train_step(std::vector<AgentNet>& nets, const std::vector<AgentNet>& targets,
                      const TrainBatch& batch, double lr, double gamma) {
  const LossGradients g = td_loss_gradients(nets, targets, batch, gamma, Credit::team);
  apply(nets, g, lr);
  return g.loss;
}

double iql_train_step(std::vector<AgentNet>& nets, const std::vector<AgentNet>& targets,
                      const TrainBatch& batch, double lr, double gamma) {
  const LossGradients g = td_loss_gradients(nets, targets, batch, gamma, Credit::local);
  apply(nets, g, lr);
  return g.loss;
}

bool sync_targets(const std::vector<AgentNet>& nets, std::vector<AgentNet>& targets,
                  std::size_t epoch, std::size_t period) {
  if (period == 0) throw Error("sync_targets: period must be positive");
  if ((epoch + 1) % period != 0) return false;
  for (std::size_t m = 0; m < nets.size(); ++m) {
    targets[m].gru = nets[m].gru;
    targets[m].head = nets[m].head;
  }
  return true;
}

std::vector<std::size_t> association_counts(std::span<const ActionCode> joint,
                                            std::size_t num_users) {
  std::vector<std::size_t> xi(num_users, 0);
  for (const ActionCode& a : joint) {
    for (std::size_t u = 0; u < num_users; ++u) xi[u] += (a.assoc >> u) & 1U;
  }
  return xi;
}

std::vector<double> local_rewards(const twin::PhysicalState& phys, const twin::TwinState& twin,
                                  std::span<const double> rates,
                                  std::span<const ActionCode> joint,
                                  std::span<const std::uint32_t> masks, double epsilon,
                                  double rho) {
  const std::size_t U = phys.size();
  if (joint.size() != masks.size()) throw Error("local_rewards: one mask per agent required");
  if (rates.size() != U || twin.positions.size() != U) throw Error("local_rewards: length mismatch");
  const auto xi = association_counts(joint, U);
  std::vector<double> out(joint.size(), 0.0);
  for (std::size_t m = 0; m < joint.size(); ++m) {
    double penalty = 0.0;
    bool over = false;
    double rate = 0.0, err = 0.0;
    for (std::size_t u = 0; u < U; ++u) {
      const bool claimed = ((joint[m].assoc >> u) & 1U) != 0;
      if (claimed && xi[u] > 1) {
        over = true;
        penalty += static_cast<double>(xi[u]) * rho;
      }
      if (claimed) rate += rates[u];
      if (((masks[m] >> u) & 1U) != 0) err += squared_distance(phys[u], twin.positions[u]);
    }
    out[m] = over ? penalty : epsilon * rate - (1.0 - epsilon) / static_cast<double>(U) * err;
  }
  return out;
}

double exploration_rate(std::size_t epoch, std::size_t total_epochs, double start, double end,
                        double fraction) {
  const double horizon = fraction * static_cast<double>(total_epochs);
  if (horizon <= 0.0) return end;
  const double progress = std::min(1.0, static_cast<double>(epoch) / horizon);
  return start + (end - start) * progress;
}

void save_agents(const std::string& path, const std::vector<AgentNet>& nets) {
  std::vector<nn::NamedMatrix> mats;
  nn::Matrix meta(1, 1);
  meta(0, 0) = static_cast<double>(nets.size());
  mats.emplace_back("agents", meta);
  for (std::size_t m = 0; m < nets.size(); ++m) {
    const std::string prefix = "agent" + std::to_string(m) + ".";
    nn::append_cell(mats, prefix, nets[m].gru);
    mats.emplace_back(prefix + "head", nets[m].head);
  }
  nn::save_checkpoint(path, mats);
}

std::vector<AgentNet> load_agents(const std::string& path) {
  const auto mats = nn::load_checkpoint(path);
  const auto count = static_cast<std::size_t>(nn::find_matrix(mats, "agents")(0, 0));
  std::vector<AgentNet> nets(count);
  for (std::size_t m = 0; m < count; ++m) {
    const std::string prefix = "agent" + std::to_string(m) + ".";
    nets[m].gru = nn::extract_cell(mats, prefix);
    nets[m].head = nn::find_matrix(mats, prefix + "head");
    nets[m].validate();
    nets[m].reset_hidden();
  }
  return nets;
}

}  // namespace dnt::marl
