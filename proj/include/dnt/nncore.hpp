#pragma once

// Minimal recurrent network kernel: bias-free GRU cell, dense output map,
// backpropagation through time and plain SGD.
//
// Activations are carried as "batches": column-major matrices whose columns
// are independent samples. A single sample is a one-column batch.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dnt/common.hpp"

namespace dnt::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Batch = Eigen::MatrixXd;

/// Input and recurrent weights of one gate.
struct GateParams {
  Matrix input;      // N_h x d_in
  Matrix recurrent;  // N_h x N_h
};

struct GruCellParams {
  GateParams reset;
  GateParams update;
  GateParams candidate;

  static GruCellParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  /// Entries uniform in [-1/sqrt(N_h), 1/sqrt(N_h)].
  static GruCellParams random(std::size_t input_dim, std::size_t hidden_dim,
                              Rng& rng);

  std::size_t input_dim() const { return static_cast<std::size_t>(reset.input.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(reset.input.rows()); }

  /// Throws Error unless all six matrices have consistent shapes.
  void validate() const;

  /// The six matrices in the fixed order W^r, U^r, W^z, U^z, W^h, U^h.
  std::vector<Matrix*> matrices();
  std::vector<const Matrix*> matrices() const;
};

/// Cached intermediates of one cell evaluation.
struct GruStep {
  Batch input;
  Batch prev_hidden;
  Batch reset;      // r
  Batch update;     // z
  Batch candidate;  // h~
  Batch hidden;     // h
};

struct GruTape {
  std::vector<GruStep> steps;
};

/// One GRU step:
///   r  = sigmoid(W^r x + U^r h_prev)
///   h~ = tanh(W^h x + U^h (h_prev . r))
///   z  = sigmoid(W^z x + U^z h_prev)
///   h  = (1 - z) . h~ + z . h_prev
GruStep gru_cell_forward(const GruCellParams& params, const Batch& input,
                         const Batch& prev_hidden);

struct SequenceForward {
  Batch output;  // out_weights * h_K
  GruTape tape;
};

/// Unrolls the cell from a zero hidden state over `inputs` and applies the
/// output map to the final hidden state.
SequenceForward gru_sequence_forward(const GruCellParams& params,
                                     const Matrix& out_weights,
                                     std::span<const Batch> inputs);

/// Unrolls the cell from a zero hidden state, keeping every step.
GruTape gru_unroll(const GruCellParams& params, std::span<const Batch> inputs);

struct GruGradients {
  GruCellParams cell;
  Matrix out;
};

/// Backpropagation through time for an arbitrary loss whose gradient with
/// respect to the hidden state of step t is `hidden_grads[t]` (entries may be
/// empty matrices for steps that receive no direct gradient). Returns the
/// gradient of every cell matrix, summed over the batch.
GruCellParams gru_backward(const GruTape& tape, const GruCellParams& params,
                           std::span<const Batch> hidden_grads);

/// Gradients of a scalar loss L given dL/d(output) for the output of
/// gru_sequence_forward.
GruGradients gru_sequence_backward(const GruTape& tape,
                                   const GruCellParams& params,
                                   const Matrix& out_weights,
                                   const Batch& output_grad);

/// param - lr * grad. Throws on shape mismatch, lr <= 0 or non-finite grad.
Matrix sgd_step(const Matrix& param, const Matrix& grad, double lr);
/// In-place form of sgd_step with the same checks.
void sgd_apply(Matrix& param, const Matrix& grad, double lr);

inline constexpr double kDefaultPredictorLr = 1e-3;  // lambda_G
inline constexpr double kDefaultQLr = 1e-4;          // lambda_Q

bool all_finite(const Matrix& m);

double sigmoid(double v);

// Checkpoints: a flat little-endian binary file with a magic header followed
// by named matrices (name, rows, cols, row-major doubles). Round trips are
// bit-exact.
using NamedMatrix = std::pair<std::string, Matrix>;

void save_checkpoint(const std::string& path, const std::vector<NamedMatrix>& mats);
std::vector<NamedMatrix> load_checkpoint(const std::string& path);

/// Appends the six cell matrices as prefix + {Wr, Ur, Wz, Uz, Wh, Uh}.
void append_cell(std::vector<NamedMatrix>& out, const std::string& prefix,
                 const GruCellParams& cell);
/// Reads a cell stored with append_cell. Throws Error if missing.
GruCellParams extract_cell(const std::vector<NamedMatrix>& mats,
                           const std::string& prefix);
const Matrix& find_matrix(const std::vector<NamedMatrix>& mats,
                          const std::string& name);

}  // namespace dnt::nn
