#include "dnt/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iostream>
#include <limits>
#include <ostream>

#include <json.hpp>

namespace dnt::harness {

std::string to_string(Policy p) {
  switch (p) {
    case Policy::learned: return "learned";
    case Policy::all_sync: return "all-sync";
    case Policy::no_sync: return "no-sync";
    case Policy::random: return "random";
  }
  return "?";
}

std::string to_string(Method m) { return m == Method::vdn ? "vdn" : "iql"; }

std::size_t SlotRecord::syncs() const {
  return static_cast<std::size_t>(std::count(sync_success.begin(), sync_success.end(), true));
}

marl::ActionCode scripted_action(std::size_t bs, const twin::PhysicalState& phys,
                                 const radio::Topology& topology, std::size_t num_rbs,
                                 bool sync) {
  std::vector<std::pair<double, std::size_t>> mine;
  for (std::size_t u = 0; u < phys.size(); ++u) {
    std::size_t nearest = topology.num_bs();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < topology.num_bs(); ++m) {
      if (!topology.covers(m, phys[u])) continue;
      const double d = squared_distance(phys[u], topology.bs_positions[m]);
      if (d < best) {
        best = d;
        nearest = m;
      }
    }
    if (nearest == bs) mine.emplace_back(best, u);
  }
  std::sort(mine.begin(), mine.end());
  marl::ActionCode a{sync && num_rbs > 0, 0};
  const std::size_t budget = num_rbs - (a.sync ? 1 : 0);
  for (std::size_t i = 0; i < std::min(budget, mine.size()); ++i) a.assoc |= 1U << mine[i].second;
  return a;
}

std::vector<radio::Violation> audit_constraints(const radio::RadioEnv& env,
                                                const radio::Allocation& alloc) {
  auto out = radio::audit_allocation(alloc);
  for (std::size_t m = 0; m < alloc.num_bs(); ++m) {
    if (!alloc.uplink_rb(m)) continue;
    if (radio::uplink_delay(env, alloc, m) > env.params.delay_cap) {
      out.push_back({radio::Constraint::c8g_delay_cap, m, *alloc.uplink_rb(m)});
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> users_of(std::uint32_t assoc, std::size_t num_users) {
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < num_users; ++u) {
    if ((assoc >> u) & 1U) users.push_back(u);
  }
  return users;
}

}  // namespace

EpisodeResult run_episode(const ExperimentConfig& config, const EpisodeInputs& in,
                          std::uint64_t episode_index) {
  const std::size_t U = config.num_users;
  const std::size_t M = config.topology.num_bs();
  const std::size_t N = config.radio.num_rbs;
  if (in.forecaster == nullptr) throw ConfigError("run_episode: no forecaster");
  if (in.profiles.size() != U) throw ConfigError("run_episode: one mobility profile per user required");
  if (in.policy == Policy::learned && (in.nets == nullptr || in.nets->size() != M)) {
    throw ConfigError("run_episode: learned policy needs one network per BS");
  }
  if ((in.policy == Policy::random || (in.policy == Policy::learned && in.explore_eps > 0.0)) &&
      in.agent_rng == nullptr) {
    throw ConfigError("run_episode: policy needs an agent random stream");
  }

  Rng mobility_rng = derive_stream(config.seed, "mobility", episode_index);
  Rng fading_rng = derive_stream(config.seed, "fading", episode_index);

  twin::PhysicalState pos(U);
  for (auto& p : pos) p = mobility::sample_covered_position(config.topology, config.arena, mobility_rng);
  twin::TwinState twin = twin::TwinState::mirror(pos);
  std::vector<twin::PhysicalState> history{pos};
  if (in.policy == Policy::learned) {
    for (auto& net : *in.nets) net.reset_hidden();
  }

  EpisodeResult result;
  result.episode.num_rbs = N;
  const alloc::AllocatorOptions options{config.allocator_rounds, true};

  for (std::size_t t = 0; t < config.horizon; ++t) {
    pos = mobility::step_all(pos, in.profiles, config.arena, mobility_rng);
    const radio::FadingDraw fading = radio::FadingDraw::sample(U, M, fading_rng);
    const twin::PhysicalState predicted = in.forecaster->predict(history);

    SlotRecord rec;
    rec.episode = static_cast<std::size_t>(episode_index);
    rec.slot = t;
    std::vector<twin::LocalObservation> observations;
    std::vector<marl::AgentSlot> agents(M);
    std::vector<alloc::BsDecision> decisions(M);
    for (std::size_t m = 0; m < M; ++m) {
      observations.push_back(twin::observe(m, pos, config.topology));
      const std::uint32_t mask = marl::coverage_mask(m, pos, config.topology);
      nn::Vector encoded = marl::encode_local_state(m, pos, config.topology);
      marl::ActionCode action;
      switch (in.policy) {
        case Policy::learned: {
          const auto valid = marl::valid_actions(mask, N);
          action = marl::act_epsilon_greedy((*in.nets)[m], encoded, valid, in.explore_eps,
                                            *in.agent_rng);
          break;
        }
        case Policy::random: {
          const auto valid = marl::valid_actions(mask, N);
          action = marl::ActionCode::from_index(valid[in.agent_rng->uniform_index(valid.size())]);
          break;
        }
        case Policy::all_sync:
        case Policy::no_sync:
          action = scripted_action(m, pos, config.topology, N, in.policy == Policy::all_sync);
          break;
      }
      agents[m].obs = std::move(encoded);
      agents[m].mask = mask;
      agents[m].action = action;
      decisions[m] = {action.sync, users_of(action.assoc, U)};
      rec.actions.push_back(action);
      rec.masks.push_back(mask);
    }

    const radio::RadioEnv env{config.topology, config.radio, fading, pos};
    alloc::AllocationOutcome outcome = alloc::allocate_all(env, decisions, options);
    twin = twin::compose_twin(twin, predicted, observations, outcome.sync_success);
    rec.rates = radio::user_rates(env, outcome.allocation);
    const auto xi = marl::association_counts(rec.actions, U);
    rec.reward = twin::team_reward(pos, twin, rec.rates, xi, config.epsilon, config.rho);
    rec.local_rewards = marl::local_rewards(pos, twin, rec.rates, rec.actions, rec.masks,
                                            config.epsilon, config.rho);
    rec.sync_error = twin::sync_error(pos, twin);
    for (double r : rec.rates) rec.total_rate += r;
    rec.sync_success = outcome.sync_success;
    rec.uplink_delay = outcome.uplink_delay;
    for (const auto& e : outcome.events) rec.events.push_back(e.describe());
    rec.violations = audit_constraints(env, outcome.allocation);
    rec.physical = pos;
    rec.twin = twin.positions;

    for (std::size_t m = 0; m < M; ++m) agents[m].local_reward = rec.local_rewards[m];
    result.episode.slots.push_back(std::move(agents));
    result.episode.team_reward.push_back(rec.reward);
    result.episode.global_states.push_back(pos);

    history.push_back(twin.positions);
    if (history.size() > config.window) history.erase(history.begin());

    result.mean_reward += rec.reward;
    result.mean_sync_error += rec.sync_error;
    result.mean_total_rate += rec.total_rate;
    result.records.push_back(std::move(rec));
  }
  // Trailing next state for the last transition.
  result.episode.global_states.push_back(
      mobility::step_all(pos, in.profiles, config.arena, mobility_rng));
  const double T = static_cast<double>(config.horizon);
  result.mean_reward /= T;
  result.mean_sync_error /= T;
  result.mean_total_rate /= T;
  return result;
}

mobility::TrajectoryDataset generate_dataset(const ExperimentConfig& config) {
  Rng rng = derive_stream(config.seed, "dataset");
  return mobility::generate_trajectories(config.num_users, config.num_trajectories,
                                         config.trajectory_length, config.profiles(),
                                         config.topology, config.arena, rng);
}

PredictorRun train_predictor(const ExperimentConfig& config) {
  config.validate();
  const mobility::TrajectoryDataset data = generate_dataset(config);
  mobility::TrajectoryDataset fit{data.num_users, {}}, holdout{data.num_users, {}};
  const std::size_t cut = std::max<std::size_t>(1, data.trajectories.size() * 4 / 5);
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    (i < cut ? fit : holdout).trajectories.push_back(data.trajectories[i]);
  }
  if (holdout.trajectories.empty()) holdout = fit;
  const auto fit_windows = predictor::build_windows(fit, config.window);
  const auto holdout_windows = predictor::build_windows(holdout, config.window);

  Rng init = derive_stream(config.seed, "predictor-init");
  Rng shuffle = derive_stream(config.seed, "predictor-shuffle");
  predictor::TrainOptions options;
  options.lr = config.predictor_lr;
  options.batch_size = config.predictor_batch;
  options.epochs = config.predictor_epochs;
  auto trained = predictor::train(
      predictor::PredictorModel::random(config.num_users, config.predictor_hidden, config.window, init),
      fit_windows, options, shuffle);

  PredictorRun run;
  run.model = std::move(trained.model);
  run.epoch_loss = std::move(trained.epoch_loss);
  run.holdout = predictor::evaluate_mse(run.model, holdout_windows);
  run.persistence = predictor::persistence_mse(holdout_windows);
  return run;
}

std::unique_ptr<predictor::Forecaster> make_forecaster(const ExperimentConfig& config) {
  if (config.predictor == PredictorKind::persistence) {
    return std::make_unique<predictor::PersistenceForecaster>();
  }
  if (!config.predictor_checkpoint.empty()) {
    predictor::PredictorModel model = predictor::load_model(config.predictor_checkpoint);
    if (model.num_users != config.num_users) {
      throw ConfigError("predictor checkpoint was trained for a different user count");
    }
    return std::make_unique<predictor::GruForecaster>(std::move(model));
  }
  return std::make_unique<predictor::GruForecaster>(train_predictor(config).model);
}

TrainOutcome train(const ExperimentConfig& config, Method method,
                   const predictor::Forecaster& forecaster) {
  config.validate();
  const std::size_t U = config.num_users;
  const std::size_t M = config.topology.num_bs();
  const std::size_t A = marl::action_space_size(U);

  Rng init = derive_stream(config.seed, "init");
  TrainOutcome out;
  for (std::size_t m = 0; m < M; ++m) {
    out.nets.push_back(marl::AgentNet::random(3 * U, config.q_hidden, A, init));
  }
  std::vector<marl::AgentNet> targets = out.nets;
  Rng explore = derive_stream(config.seed, "exploration");
  Rng replay_rng = derive_stream(config.seed, "replay");
  marl::ReplayMemory memory(config.replay_capacity);
  const auto profiles = config.profiles();

  for (std::size_t g = 0; g < config.epochs; ++g) {
    const double eps = marl::exploration_rate(g, config.epochs, config.explore_start,
                                              config.explore_end, config.explore_fraction);
    EpisodeInputs in{profiles, &forecaster, Policy::learned, &out.nets, eps, &explore};
    EpisodeResult ep = run_episode(config, in, g);
    memory.push(std::move(ep.episode));

    double loss = 0.0;
    for (std::size_t s = 0; s < config.train_steps_per_epoch; ++s) {
      const auto refs = memory.sample(config.batch_size, replay_rng);
      const auto batch = marl::TrainBatch::from_refs(memory, refs);
      loss += method == Method::vdn
                  ? marl::vdn_train_step(out.nets, targets, batch, config.q_lr, config.gamma)
                  : marl::iql_train_step(out.nets, targets, batch, config.q_lr, config.gamma);
    }
    if (config.train_steps_per_epoch > 0) loss /= static_cast<double>(config.train_steps_per_epoch);
    if (!std::isfinite(loss)) throw DivergenceError("training loss is not finite");
    marl::sync_targets(out.nets, targets, g, config.target_period);
    out.curve.push_back({g, loss, ep.mean_reward, eps});
  }
  return out;
}

EvalSummary evaluate(const ExperimentConfig& config, Policy policy,
                     std::vector<marl::AgentNet>* nets, const predictor::Forecaster& forecaster) {
  config.validate();
  EvalSummary s;
  s.policy = to_string(policy);
  s.episodes = config.eval_episodes;
  s.sync_histogram.assign(config.topology.num_bs() + 1, 0);
  Rng agent_rng = derive_stream(config.seed, "eval-agent");
  const auto profiles = config.profiles();
  for (std::size_t k = 0; k < config.eval_episodes; ++k) {
    EpisodeInputs in{profiles, &forecaster, policy, nets, 0.0, &agent_rng};
    EpisodeResult ep = run_episode(config, in, kEvalEpisodeBase + k);
    for (auto& rec : ep.records) {
      s.mean_reward += rec.reward;
      s.mean_sync_error += rec.sync_error;
      s.mean_total_rate += rec.total_rate;
      ++s.sync_histogram[rec.syncs()];
      s.records.push_back(std::move(rec));
    }
  }
  const double n = static_cast<double>(s.records.size());
  s.mean_reward /= n;
  s.mean_sync_error /= n;
  s.mean_total_rate /= n;
  return s;
}

std::vector<SweepRow> sweep(const ExperimentConfig& config, SweepAxis axis) {
  config.validate();
  std::vector<SweepRow> rows;
  const std::vector<double> grid =
      axis == SweepAxis::epsilon
          ? config.sweep_epsilon
          : std::vector<double>(config.sweep_users.begin(), config.sweep_users.end());
  for (double value : grid) {
    ExperimentConfig point = config;
    if (axis == SweepAxis::epsilon) {
      point.epsilon = value;
    } else {
      point.num_users = static_cast<std::size_t>(value);
      // A checkpoint only fits one user count; other points train in place.
      if (!point.predictor_checkpoint.empty() &&
          predictor::load_model(point.predictor_checkpoint).num_users != point.num_users) {
        point.predictor_checkpoint.clear();
      }
    }
    SweepRow vdn{value, "vdn", 0, 0, 0}, iql{value, "iql", 0, 0, 0};
    for (std::size_t k = 0; k < config.sweep_seeds; ++k) {
      point.seed = config.seed + k;
      const auto forecaster = make_forecaster(point);
      for (SweepRow* row : {&vdn, &iql}) {
        const Method method = row == &vdn ? Method::vdn : Method::iql;
        TrainOutcome trained = train(point, method, *forecaster);
        const EvalSummary s = evaluate(point, Policy::learned, &trained.nets, *forecaster);
        row->mean_total_rate += s.mean_total_rate;
        row->mean_sync_error += s.mean_sync_error;
        row->mean_reward += s.mean_reward;
      }
    }
    for (SweepRow* row : {&vdn, &iql}) {
      const double n = static_cast<double>(config.sweep_seeds);
      row->mean_total_rate /= n;
      row->mean_sync_error /= n;
      row->mean_reward /= n;
      rows.push_back(*row);
    }
  }
  return rows;
}

namespace {

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += ';';
    s += fmt(items[i]);
  }
  return s;
}

std::string format_position(Vec2 p) { return format_real(p.x) + ":" + format_real(p.y); }

}  // namespace

void write_trace_csv(std::ostream& out, const std::vector<SlotRecord>& records) {
  out << "episode,slot,actions,masks,sync_success,uplink_delay,rates,physical,twin,total_rate,"
         "sync_error,reward,events\n";
  for (const SlotRecord& r : records) {
    std::vector<int> success(r.sync_success.begin(), r.sync_success.end());
    out << r.episode << ',' << r.slot << ','
        << join(r.actions, [](const marl::ActionCode& a) {
             return std::to_string(a.sync ? 1 : 0) + ":" + std::to_string(a.assoc);
           })
        << ',' << join(r.masks, [](std::uint32_t m) { return std::to_string(m); }) << ','
        << join(success, [](int v) { return std::to_string(v); }) << ','
        << join(r.uplink_delay, [](double d) { return format_real(d); }) << ','
        << join(r.rates, [](double d) { return format_real(d); }) << ','
        << join(r.physical, format_position) << ',' << join(r.twin, format_position) << ','
        << format_real(r.total_rate) << ',' << format_real(r.sync_error) << ','
        << format_real(r.reward) << ',' << join(r.events, [](const std::string& e) { return e; })
        << '\n';
  }
}

void write_curve_csv(std::ostream& out, const std::vector<EpochStats>& curve) {
  out << "epoch,loss,mean_reward,eps\n";
  for (const EpochStats& e : curve) {
    out << e.epoch << ',' << format_real(e.loss) << ',' << format_real(e.mean_reward) << ','
        << format_real(e.explore_eps) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << "axis,value,method,mean_rate,mean_dnt_error,mean_reward\n";
  for (const SweepRow& r : rows) {
    out << (axis == SweepAxis::epsilon ? "epsilon" : "users") << ',' << format_real(r.value) << ','
        << r.method << ',' << format_real(r.mean_total_rate) << ','
        << format_real(r.mean_sync_error) << ',' << format_real(r.mean_reward) << '\n';
  }
}

std::string summary_json(const EvalSummary& s, const ExperimentConfig& config) {
  nlohmann::ordered_json j;
  j["policy"] = s.policy;
  j["seed"] = config.seed;
  j["num_users"] = config.num_users;
  j["epsilon"] = config.epsilon;
  j["episodes"] = s.episodes;
  j["slots"] = s.records.size();
  j["mean_reward"] = s.mean_reward;
  j["mean_dnt_error"] = s.mean_sync_error;
  j["mean_total_rate"] = s.mean_total_rate;
  j["sync_histogram"] = s.sync_histogram;
  return j.dump(2) + "\n";
}

}  // namespace dnt::harness
