#include "dnt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace dnt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a real, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  const char* name;
  const char* comment;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Key count_key(const char* name, const char* comment, T ExperimentConfig::*field) {
  return {name, comment,
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); },
          [field, name](ExperimentConfig& c, const std::string& v) {
            c.*field = static_cast<T>(parse_u64(name, v));
          }};
}

Key real_key(const char* name, const char* comment, double ExperimentConfig::*field) {
  return {name, comment, [field](const ExperimentConfig& c) { return format_real(c.*field); },
          [field, name](ExperimentConfig& c, const std::string& v) { c.*field = parse_double(name, v); }};
}

Key radio_real(const char* name, const char* comment, double radio::RadioParams::*field) {
  return {name, comment, [field](const ExperimentConfig& c) { return format_real(c.radio.*field); },
          [field, name](ExperimentConfig& c, const std::string& v) {
            c.radio.*field = parse_double(name, v);
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      count_key("num_users", "U", &ExperimentConfig::num_users),
      {"num_rbs", "N, RBs per BS",
       [](const ExperimentConfig& c) { return std::to_string(c.radio.num_rbs); },
       [](ExperimentConfig& c, const std::string& v) {
         c.radio.num_rbs = static_cast<std::size_t>(parse_u64("num_rbs", v));
       }},
      radio_real("bandwidth", "B", &radio::RadioParams::bandwidth),
      radio_real("power", "P", &radio::RadioParams::power),
      radio_real("noise_psd", "N_0", &radio::RadioParams::noise_psd),
      radio_real("payload", "D_m, sync payload", &radio::RadioParams::payload),
      radio_real("delay_cap", "alpha, uplink delay limit", &radio::RadioParams::delay_cap),
      {"pathloss", "paper | squared",
       [](const ExperimentConfig& c) {
         return std::string(c.radio.pathloss == radio::PathlossMode::paper ? "paper" : "squared");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "paper") c.radio.pathloss = radio::PathlossMode::paper;
         else if (v == "squared") c.radio.pathloss = radio::PathlossMode::squared;
         else throw ConfigError("config: pathloss must be 'paper' or 'squared'");
       }},
      {"coverage_radius", "BS coverage radius, m",
       [](const ExperimentConfig& c) { return format_real(c.topology.coverage_radius); },
       [](ExperimentConfig& c, const std::string& v) {
         c.topology.coverage_radius = parse_double("coverage_radius", v);
       }},
      count_key("allocator_rounds", "RB re-matching rounds", &ExperimentConfig::allocator_rounds),
      real_key("step", "delta l, m per slot", &ExperimentConfig::step),
      {"mobility", "uniform | drift",
       [](const ExperimentConfig& c) {
         return std::string(c.mobility == MobilityKind::uniform ? "uniform" : "drift");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "uniform") c.mobility = MobilityKind::uniform;
         else if (v == "drift") c.mobility = MobilityKind::drift;
         else throw ConfigError("config: mobility must be 'uniform' or 'drift'");
       }},
      real_key("drift_bias", "preferred-move probability for drift profiles",
               &ExperimentConfig::drift_bias),
      {"predictor", "gru | persistence",
       [](const ExperimentConfig& c) {
         return std::string(c.predictor == PredictorKind::gru ? "gru" : "persistence");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "gru") c.predictor = PredictorKind::gru;
         else if (v == "persistence") c.predictor = PredictorKind::persistence;
         else throw ConfigError("config: predictor must be 'gru' or 'persistence'");
       }},
      {"predictor_checkpoint", "trained predictor; empty trains one in place",
       [](const ExperimentConfig& c) { return c.predictor_checkpoint; },
       [](ExperimentConfig& c, const std::string& v) { c.predictor_checkpoint = v; }},
      count_key("predictor_hidden", "N^h", &ExperimentConfig::predictor_hidden),
      count_key("window", "K", &ExperimentConfig::window),
      real_key("predictor_lr", "lambda_G", &ExperimentConfig::predictor_lr),
      count_key("predictor_batch", "predictor mini-batch", &ExperimentConfig::predictor_batch),
      count_key("predictor_epochs", "predictor passes over the data",
                &ExperimentConfig::predictor_epochs),
      count_key("num_trajectories", "trajectories in the predictor dataset",
                &ExperimentConfig::num_trajectories),
      count_key("trajectory_length", "slots per trajectory", &ExperimentConfig::trajectory_length),
      count_key("q_hidden", "theta^h", &ExperimentConfig::q_hidden),
      real_key("q_lr", "lambda_Q", &ExperimentConfig::q_lr),
      real_key("gamma", "gamma", &ExperimentConfig::gamma),
      count_key("epochs", "G", &ExperimentConfig::epochs),
      count_key("horizon", "T, slots per episode (D = one episode per epoch)",
                &ExperimentConfig::horizon),
      count_key("batch_size", "|D_g|", &ExperimentConfig::batch_size),
      count_key("replay_capacity", "transitions", &ExperimentConfig::replay_capacity),
      count_key("target_period", "C, epochs between target copies",
                &ExperimentConfig::target_period),
      count_key("train_steps_per_epoch", "gradient steps per epoch",
                &ExperimentConfig::train_steps_per_epoch),
      real_key("explore_start", "initial exploration rate", &ExperimentConfig::explore_start),
      real_key("explore_end", "final exploration rate", &ExperimentConfig::explore_end),
      real_key("explore_fraction", "share of epochs spent decaying",
               &ExperimentConfig::explore_fraction),
      real_key("epsilon", "epsilon, rate weight in the reward", &ExperimentConfig::epsilon),
      real_key("rho", "rho, multi-serve penalty", &ExperimentConfig::rho),
      {"seed", "master seed",
       [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      count_key("eval_episodes", "greedy evaluation episodes", &ExperimentConfig::eval_episodes),
      {"sweep_epsilon", "epsilon grid",
       [](const ExperimentConfig& c) { return join_reals(c.sweep_epsilon); },
       [](ExperimentConfig& c, const std::string& v) {
         c.sweep_epsilon.clear();
         for (const auto& item : split_list(v)) c.sweep_epsilon.push_back(parse_double("sweep_epsilon", item));
       }},
      {"sweep_users", "user-count grid",
       [](const ExperimentConfig& c) { return join_counts(c.sweep_users); },
       [](ExperimentConfig& c, const std::string& v) {
         c.sweep_users.clear();
         for (const auto& item : split_list(v)) {
           c.sweep_users.push_back(static_cast<std::size_t>(parse_u64("sweep_users", item)));
         }
       }},
      count_key("sweep_seeds", "seeds per grid point", &ExperimentConfig::sweep_seeds),
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  require(num_users >= 1 && num_users <= 20, "num_users must be in [1, 20]");
  require(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(step > 0.0, "step must be positive");
  require(drift_bias >= 0.0 && drift_bias <= 1.0, "drift_bias must lie in [0, 1]");
  require(window >= 1 && predictor_hidden >= 1 && q_hidden >= 1, "network sizes must be positive");
  require(predictor_lr > 0.0 && q_lr > 0.0, "learning rates must be positive");
  require(predictor_batch >= 1 && batch_size >= 1, "batch sizes must be positive");
  require(num_trajectories >= 1 && trajectory_length > window,
          "need trajectories longer than the window");
  require(epochs >= 1 && horizon >= 1, "epochs and horizon must be positive");
  require(replay_capacity >= horizon, "replay capacity must hold one episode");
  require(target_period >= 1, "target_period must be positive");
  require(explore_start >= 0.0 && explore_start <= 1.0 && explore_end >= 0.0 &&
              explore_end <= 1.0 && explore_fraction >= 0.0 && explore_fraction <= 1.0,
          "exploration settings must lie in [0, 1]");
  require(allocator_rounds >= 1, "allocator_rounds must be positive");
  require(eval_episodes >= 1 && sweep_seeds >= 1, "episode and seed counts must be positive");
  for (double e : sweep_epsilon) require(e > 0.0 && e < 1.0, "sweep_epsilon entries must lie in (0, 1)");
  for (std::size_t u : sweep_users) require(u >= 1 && u <= 20, "sweep_users entries must be in [1, 20]");
  try {
    topology.validate();
    radio.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::vector<mobility::MobilityProfile> ExperimentConfig::profiles() const {
  if (mobility == MobilityKind::uniform) {
    return std::vector<mobility::MobilityProfile>(num_users, mobility::MobilityProfile::uniform(step));
  }
  // Profiles are part of the world, so they come from their own lane.
  Rng rng = derive_stream(seed, "profiles");
  return mobility::drift_profiles(num_users, drift_bias, step, rng);
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "paper-text") return c;
  if (name == "paper-table2") {
    c.num_users = 10;
    return c;
  }
  throw ConfigError("config: unknown preset '" + name + "'");
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  ExperimentConfig c = std::move(base);
  std::string line;
  std::size_t lineno = 0;
  bool seen_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "preset") {
      if (seen_key) throw ConfigError("config: 'preset' must precede every other key");
      c = preset(value);
      continue;
    }
    seen_key = true;
    bool found = false;
    for (const Key& k : keys()) {
      if (key == k.name) {
        k.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const Key& k : keys()) {
    out += k.name;
    out += " = ";
    out += k.get(config);
    out += "  # ";
    out += k.comment;
    out += '\n';
  }
  return out;
}

}  // namespace dnt
