#pragma once

// Cloud-side next-state predictor: a GRU over the last K twin states followed
// by a linear read-out, trained with mini-batch SGD on the normalized
// squared error.
//
// Windows are fed in a frame anchored at their most recent state: every
// state enters as (s_tau - s_t) * kPositionScale and the read-out is the
// scaled displacement to the next slot.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dnt/mobility.hpp"
#include "dnt/nncore.hpp"
#include "dnt/twin.hpp"

namespace dnt::predictor {

/// Anchored displacements (meters) are multiplied by this before entering
/// the network.
inline constexpr double kPositionScale = 0.25;

struct PredictorModel {
  nn::GruCellParams gru;  // input 2U, hidden N_h
  nn::Matrix out;         // 2U x N_h
  std::size_t window = 5; // K
  std::size_t num_users = 0;

  static PredictorModel random(std::size_t num_users, std::size_t hidden, std::size_t window,
                               Rng& rng);
  static PredictorModel zeros(std::size_t num_users, std::size_t hidden, std::size_t window);

  void validate() const;
};

/// [x0, y0, x1, y1, ...] in meters.
nn::Vector flatten(const twin::PhysicalState& state);
twin::PhysicalState unflatten(const nn::Vector& v);

/// Re-expresses raw flattened states relative to the last one, scaled.
std::vector<nn::Vector> encode_window(std::span<const nn::Vector> raw);

/// K consecutive encoded states and the encoded displacement that follows.
struct WindowSample {
  std::vector<nn::Vector> inputs;
  nn::Vector target;
};

/// Every length-(K+1) window of every trajectory. Throws if a trajectory is
/// too short to yield any window or if K is zero.
std::vector<WindowSample> build_windows(const mobility::TrajectoryDataset& data,
                                        std::size_t window);

/// The last K raw flattened states of `history`, left-padded with its first
/// state.
std::vector<nn::Vector> prepare_history(std::span<const twin::PhysicalState> history,
                                        std::size_t window);

/// Raw network output for encoded inputs.
nn::Vector predict_scaled(const PredictorModel& model, std::span<const nn::Vector> inputs);
/// One-step-ahead prediction from raw twin states.
twin::PhysicalState predict_next(const PredictorModel& model,
                                 std::span<const twin::PhysicalState> history);

/// ||pred - truth||^2 / len(pred), i.e. the 1/(2U) normalized squared error.
double loss(const nn::Vector& pred, const nn::Vector& truth);

struct TrainOptions {
  double lr = nn::kDefaultPredictorLr;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double divergence_limit = 1e6;
};

struct TrainResult {
  PredictorModel model;
  std::vector<double> epoch_loss;  // mean sample loss seen during each epoch
};

TrainResult train(PredictorModel model, std::span<const WindowSample> samples,
                  const TrainOptions& options, Rng& rng);

/// Mean loss and gradients of the mean loss over `samples`.
struct BatchGradient {
  double loss = 0.0;
  nn::GruGradients grads;
};
BatchGradient batch_gradient(const PredictorModel& model,
                             std::span<const WindowSample* const> samples);

struct MseReport {
  std::vector<double> per_user;  // mean squared position error, meters^2
  double aggregate = 0.0;        // mean over users
};

MseReport evaluate_mse(const PredictorModel& model, std::span<const WindowSample> samples);
/// Baseline that repeats the last input state.
MseReport persistence_mse(std::span<const WindowSample> samples);

void save_model(const std::string& path, const PredictorModel& model);
PredictorModel load_model(const std::string& path);

/// Source of the twin's estimate for the next slot.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual twin::PhysicalState predict(std::span<const twin::PhysicalState> history) const = 0;
};

class GruForecaster final : public Forecaster {
 public:
  explicit GruForecaster(PredictorModel model) : model_(std::move(model)) {}
  twin::PhysicalState predict(std::span<const twin::PhysicalState> history) const override {
    return predict_next(model_, history);
  }
  const PredictorModel& model() const { return model_; }

 private:
  PredictorModel model_;
};

/// Repeats the most recent twin state.
class PersistenceForecaster final : public Forecaster {
 public:
  twin::PhysicalState predict(std::span<const twin::PhysicalState> history) const override;
};

}  // namespace dnt::predictor
