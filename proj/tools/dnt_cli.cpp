// Command-line front end: dataset generation, predictor and agent training,
// evaluation, sweeps and constraint audits.
//
// Exit codes: 0 success, 2 configuration error, 3 training divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dnt/harness.hpp"

namespace fs = std::filesystem;
using namespace dnt;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
};

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed_set) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / name, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + (fs::path(c.out) / name).string());
  return f;
}

std::string path_in(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key = value config file");
  sub->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s; c.seed_set = true; }, "master seed");
  sub->add_option("--out", c.out, "output directory");
}

int gen_data(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  auto f = open_out(c, "trajectories.csv");
  mobility::write_trajectories_csv(f, harness::generate_dataset(cfg));
  return 0;
}

int train_predictor(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const harness::PredictorRun run = harness::train_predictor(cfg);
  predictor::save_model(path_in(c, "predictor.ckpt"), run.model);
  auto curve = open_out(c, "predictor_curve.csv");
  curve << "epoch,loss\n";
  for (std::size_t e = 0; e < run.epoch_loss.size(); ++e) {
    curve << e << ',' << format_real(run.epoch_loss[e]) << '\n';
  }
  nlohmann::ordered_json j;
  j["holdout_mse"] = run.holdout.aggregate;
  j["persistence_mse"] = run.persistence.aggregate;
  j["holdout_mse_per_user"] = run.holdout.per_user;
  j["persistence_mse_per_user"] = run.persistence.per_user;
  open_out(c, "predictor.json") << j.dump(2) << '\n';
  std::cout << "holdout MSE " << format_real(run.holdout.aggregate) << " m^2, persistence "
            << format_real(run.persistence.aggregate) << " m^2\n";
  return 0;
}

int train_agents(const Common& c, harness::Method method) {
  const ExperimentConfig cfg = resolve(c);
  const auto forecaster = harness::make_forecaster(cfg);
  const harness::TrainOutcome out = harness::train(cfg, method, *forecaster);
  marl::save_agents(path_in(c, harness::to_string(method) + ".ckpt"), out.nets);
  auto f = open_out(c, "curve.csv");
  harness::write_curve_csv(f, out.curve);
  return 0;
}

int evaluate(const Common& c, const std::string& policy_name, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(c);
  harness::Policy policy;
  if (policy_name == "learned") policy = harness::Policy::learned;
  else if (policy_name == "all-sync") policy = harness::Policy::all_sync;
  else if (policy_name == "no-sync") policy = harness::Policy::no_sync;
  else if (policy_name == "random") policy = harness::Policy::random;
  else throw ConfigError("unknown policy '" + policy_name + "'");

  std::vector<marl::AgentNet> nets;
  if (policy == harness::Policy::learned) {
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required for the learned policy");
    nets = marl::load_agents(checkpoint);
    if (nets.size() != cfg.topology.num_bs() ||
        nets.front().head.rows() != static_cast<Eigen::Index>(marl::action_space_size(cfg.num_users))) {
      throw ConfigError("agent checkpoint does not match the configuration");
    }
  }
  const auto forecaster = harness::make_forecaster(cfg);
  const harness::EvalSummary s = harness::evaluate(cfg, policy, &nets, *forecaster);
  open_out(c, "summary.json") << harness::summary_json(s, cfg);
  auto trace = open_out(c, "trace.csv");
  harness::write_trace_csv(trace, s.records);
  return 0;
}

int sweep(const Common& c, const std::string& axis_name) {
  const ExperimentConfig cfg = resolve(c);
  harness::SweepAxis axis;
  if (axis_name == "epsilon") axis = harness::SweepAxis::epsilon;
  else if (axis_name == "users") axis = harness::SweepAxis::users;
  else throw ConfigError("unknown sweep axis '" + axis_name + "'");
  const auto rows = harness::sweep(cfg, axis);
  auto f = open_out(c, "sweep.csv");
  harness::write_sweep_csv(f, axis, rows);
  return 0;
}

int audit(const Common& c, std::size_t slots) {
  ExperimentConfig cfg = resolve(c);
  const predictor::PersistenceForecaster forecaster;
  Rng agent_rng = derive_stream(cfg.seed, "audit-agent");
  const auto profiles = cfg.profiles();
  std::size_t done = 0, violations = 0, sync_failures = 0, episode = 0;
  auto f = open_out(c, "audit.csv");
  f << "episode,slot,constraint,bs,index\n";
  while (done < slots) {
    harness::EpisodeInputs in{profiles, &forecaster, harness::Policy::random, nullptr, 0.0, &agent_rng};
    const auto ep = harness::run_episode(cfg, in, episode);
    for (const auto& rec : ep.records) {
      if (done == slots) break;
      ++done;
      for (const auto& e : rec.events) sync_failures += e.rfind("sync_fail", 0) == 0 ? 1 : 0;
      for (const auto& v : rec.violations) {
        ++violations;
        f << rec.episode << ',' << rec.slot << ',' << radio::to_string(v.constraint) << ',' << v.bs
          << ',' << v.index << '\n';
      }
    }
    ++episode;
  }
  std::cout << "slots " << done << ", violations " << violations << ", sync failures "
            << sync_failures << '\n';
  return violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital network twin synchronization and association simulator"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-data", "write a trajectory dataset");
  auto* tp = app.add_subcommand("train-predictor", "train the mobility predictor");
  auto* tv = app.add_subcommand("train-vdn", "train agents with the decomposed team loss");
  auto* ti = app.add_subcommand("train-iql", "train independent learners");
  auto* ev = app.add_subcommand("evaluate", "greedy rollouts and summary");
  auto* sw = app.add_subcommand("sweep", "retrain and evaluate over a grid");
  auto* au = app.add_subcommand("audit", "fuzz the allocator against the constraints");
  for (auto* sub : {gen, tp, tv, ti, ev, sw, au}) add_common(sub, common);

  std::string policy = "learned", checkpoint, axis = "epsilon";
  std::size_t slots = 10000;
  ev->add_option("--policy", policy, "learned | all-sync | no-sync | random");
  ev->add_option("--checkpoint", checkpoint, "agent checkpoint for the learned policy");
  sw->add_option("--axis", axis, "epsilon | users");
  au->add_option("--slots", slots, "slots to audit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return gen_data(common);
    if (tp->parsed()) return train_predictor(common);
    if (tv->parsed()) return train_agents(common, harness::Method::vdn);
    if (ti->parsed()) return train_agents(common, harness::Method::iql);
    if (ev->parsed()) return evaluate(common, policy, checkpoint);
    if (sw->parsed()) return sweep(common, axis);
    if (au->parsed()) return audit(common, slots);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
