#include "dnt/predictor.hpp"

#include <cmath>
#include <numeric>

namespace dnt::predictor {

PredictorModel PredictorModel::random(std::size_t num_users, std::size_t hidden,
                                      std::size_t window, Rng& rng) {
  PredictorModel m;
  m.num_users = num_users;
  m.window = window;
  m.gru = nn::GruCellParams::random(2 * num_users, hidden, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  m.out.resize(static_cast<Eigen::Index>(2 * num_users), static_cast<Eigen::Index>(hidden));
  for (Eigen::Index i = 0; i < m.out.size(); ++i) m.out.data()[i] = rng.uniform(-bound, bound);
  m.validate();
  return m;
}

PredictorModel PredictorModel::zeros(std::size_t num_users, std::size_t hidden,
                                     std::size_t window) {
  PredictorModel m;
  m.num_users = num_users;
  m.window = window;
  m.gru = nn::GruCellParams::zeros(2 * num_users, hidden);
  m.out = nn::Matrix::Zero(static_cast<Eigen::Index>(2 * num_users),
                           static_cast<Eigen::Index>(hidden));
  m.validate();
  return m;
}

void PredictorModel::validate() const {
  gru.validate();
  if (num_users == 0 || window == 0) throw Error("predictor: users and window must be positive");
  if (gru.input_dim() != 2 * num_users) throw Error("predictor: GRU input must be 2U");
  if (out.rows() != static_cast<Eigen::Index>(2 * num_users) ||
      out.cols() != static_cast<Eigen::Index>(gru.hidden_dim())) {
    throw Error("predictor: output map must be 2U x N_h");
  }
}

nn::Vector flatten(const twin::PhysicalState& state) {
  nn::Vector v(static_cast<Eigen::Index>(2 * state.size()));
  for (std::size_t u = 0; u < state.size(); ++u) {
    v[static_cast<Eigen::Index>(2 * u)] = state[u].x;
    v[static_cast<Eigen::Index>(2 * u + 1)] = state[u].y;
  }
  return v;
}

twin::PhysicalState unflatten(const nn::Vector& v) {
  twin::PhysicalState s(static_cast<std::size_t>(v.size()) / 2);
  for (std::size_t u = 0; u < s.size(); ++u) {
    s[u] = {v[static_cast<Eigen::Index>(2 * u)], v[static_cast<Eigen::Index>(2 * u + 1)]};
  }
  return s;
}

std::vector<nn::Vector> encode_window(std::span<const nn::Vector> raw) {
  if (raw.empty()) throw Error("encode_window: empty window");
  const nn::Vector& anchor = raw.back();
  std::vector<nn::Vector> out;
  out.reserve(raw.size());
  for (const nn::Vector& s : raw) out.push_back((s - anchor) * kPositionScale);
  return out;
}

std::vector<WindowSample> build_windows(const mobility::TrajectoryDataset& data,
                                        std::size_t window) {
  if (window == 0) throw Error("build_windows: window must be positive");
  std::vector<WindowSample> samples;
  for (const auto& traj : data.trajectories) {
    if (traj.size() < window + 1) {
      throw Error("build_windows: trajectory shorter than window + 1 yields no samples");
    }
    std::vector<nn::Vector> flat;
    flat.reserve(traj.size());
    for (const auto& s : traj) flat.push_back(flatten(s));
    for (std::size_t t = 0; t + window < flat.size(); ++t) {
      WindowSample w;
      w.inputs = encode_window(std::span(flat).subspan(t, window));
      w.target = (flat[t + window] - flat[t + window - 1]) * kPositionScale;
      samples.push_back(std::move(w));
    }
  }
  if (samples.empty()) throw Error("build_windows: empty dataset");
  return samples;
}

std::vector<nn::Vector> prepare_history(std::span<const twin::PhysicalState> history,
                                        std::size_t window) {
  if (history.empty()) throw Error("predict_next: empty history");
  std::vector<nn::Vector> raw;
  raw.reserve(window);
  const std::size_t have = std::min(history.size(), window);
  for (std::size_t i = have; i < window; ++i) raw.push_back(flatten(history[history.size() - have]));
  for (std::size_t i = history.size() - have; i < history.size(); ++i) raw.push_back(flatten(history[i]));
  return raw;
}

nn::Vector predict_scaled(const PredictorModel& model, std::span<const nn::Vector> inputs) {
  std::vector<nn::Batch> batches(inputs.begin(), inputs.end());
  const auto f = nn::gru_sequence_forward(model.gru, model.out, batches);
  return f.output.col(0);
}

twin::PhysicalState predict_next(const PredictorModel& model,
                                 std::span<const twin::PhysicalState> history) {
  if (history.front().size() != model.num_users) throw Error("predict_next: user count mismatch");
  const auto raw = prepare_history(history, model.window);
  const auto inputs = encode_window(raw);
  return unflatten(raw.back() + predict_scaled(model, inputs) / kPositionScale);
}

double loss(const nn::Vector& pred, const nn::Vector& truth) {
  if (pred.size() != truth.size() || pred.size() == 0) throw Error("loss: length mismatch");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

BatchGradient batch_gradient(const PredictorModel& model,
                             std::span<const WindowSample* const> samples) {
  if (samples.empty()) throw Error("batch_gradient: empty batch");
  const std::size_t window = samples.front()->inputs.size();
  const auto dim = static_cast<Eigen::Index>(2 * model.num_users);
  const auto batch = static_cast<Eigen::Index>(samples.size());

  std::vector<nn::Batch> inputs(window, nn::Batch(dim, batch));
  nn::Batch target(dim, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const WindowSample& s = *samples[static_cast<std::size_t>(b)];
    if (s.inputs.size() != window) throw Error("batch_gradient: ragged windows");
    for (std::size_t k = 0; k < window; ++k) inputs[k].col(b) = s.inputs[k];
    target.col(b) = s.target;
  }
  const auto f = nn::gru_sequence_forward(model.gru, model.out, inputs);
  const nn::Batch err = f.output - target;
  BatchGradient g;
  g.loss = err.squaredNorm() / static_cast<double>(dim) / static_cast<double>(batch);
  // d/dpred of mean_b ||e_b||^2 / (2U) = 2 e_b / (2U) / B.
  const nn::Batch out_grad = err * (2.0 / static_cast<double>(dim) / static_cast<double>(batch));
  g.grads = nn::gru_sequence_backward(f.tape, model.gru, model.out, out_grad);
  return g;
}

TrainResult train(PredictorModel model, std::span<const WindowSample> samples,
                  const TrainOptions& options, Rng& rng) {
  if (samples.empty()) throw Error("predictor train: empty dataset");
  if (options.batch_size == 0) throw Error("predictor train: batch size must be positive");
  model.validate();
  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const WindowSample*> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    // Fisher-Yates with the seeded stream.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
      const BatchGradient g = batch_gradient(model, batch);
      if (!std::isfinite(g.loss)) throw DivergenceError("predictor train: non-finite loss");
      weighted += g.loss * static_cast<double>(batch.size());
      auto params = model.gru.matrices();
      const auto grads = std::as_const(g.grads.cell).matrices();
      for (std::size_t i = 0; i < params.size(); ++i) nn::sgd_apply(*params[i], *grads[i], options.lr);
      nn::sgd_apply(model.out, g.grads.out, options.lr);
    }
    const double epoch_loss = weighted / static_cast<double>(samples.size());
    result.epoch_loss.push_back(epoch_loss);
    if (!(epoch_loss <= options.divergence_limit)) {
      throw DivergenceError("predictor train: epoch loss exceeded divergence limit");
    }
  }
  result.model = std::move(model);
  return result;
}

namespace {

MseReport accumulate(std::span<const WindowSample> samples,
                     const std::vector<nn::Vector>& predictions) {
  MseReport r;
  if (samples.empty()) return r;
  const std::size_t users = static_cast<std::size_t>(samples.front().target.size()) / 2;
  r.per_user.assign(users, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const nn::Vector diff = (predictions[i] - samples[i].target) / kPositionScale;
    for (std::size_t u = 0; u < users; ++u) {
      const double dx = diff[static_cast<Eigen::Index>(2 * u)];
      const double dy = diff[static_cast<Eigen::Index>(2 * u + 1)];
      r.per_user[u] += dx * dx + dy * dy;
    }
  }
  for (double& v : r.per_user) v /= static_cast<double>(samples.size());
  r.aggregate = std::accumulate(r.per_user.begin(), r.per_user.end(), 0.0) /
                static_cast<double>(users);
  return r;
}

}  // namespace

MseReport evaluate_mse(const PredictorModel& model, std::span<const WindowSample> samples) {
  std::vector<nn::Vector> preds;
  preds.reserve(samples.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    const auto dim = static_cast<Eigen::Index>(2 * model.num_users);
    std::vector<nn::Batch> inputs(model.window,
                                  nn::Batch(dim, static_cast<Eigen::Index>(end - start)));
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].inputs.size() != model.window) throw Error("evaluate_mse: window mismatch");
      for (std::size_t k = 0; k < model.window; ++k) {
        inputs[k].col(static_cast<Eigen::Index>(i - start)) = samples[i].inputs[k];
      }
    }
    const auto f = nn::gru_sequence_forward(model.gru, model.out, inputs);
    for (Eigen::Index c = 0; c < f.output.cols(); ++c) preds.push_back(f.output.col(c));
  }
  return accumulate(samples, preds);
}

MseReport persistence_mse(std::span<const WindowSample> samples) {
  std::vector<nn::Vector> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) preds.push_back(s.inputs.back());
  return accumulate(samples, preds);
}

void save_model(const std::string& path, const PredictorModel& model) {
  std::vector<nn::NamedMatrix> mats;
  nn::Matrix meta(1, 2);
  meta << static_cast<double>(model.num_users), static_cast<double>(model.window);
  mats.emplace_back("meta", meta);
  nn::append_cell(mats, "gru.", model.gru);
  mats.emplace_back("out", model.out);
  nn::save_checkpoint(path, mats);
}

PredictorModel load_model(const std::string& path) {
  const auto mats = nn::load_checkpoint(path);
  const nn::Matrix& meta = nn::find_matrix(mats, "meta");
  if (meta.size() != 2) throw Error("predictor checkpoint: bad meta block");
  PredictorModel m;
  m.num_users = static_cast<std::size_t>(meta(0, 0));
  m.window = static_cast<std::size_t>(meta(0, 1));
  m.gru = nn::extract_cell(mats, "gru.");
  m.out = nn::find_matrix(mats, "out");
  m.validate();
  return m;
}

twin::PhysicalState PersistenceForecaster::predict(
    std::span<const twin::PhysicalState> history) const {
  if (history.empty()) throw Error("PersistenceForecaster: empty history");
  return history.back();
}

}  // namespace dnt::predictor
