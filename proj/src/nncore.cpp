#include "dnt/nncore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dnt::nn {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'T', 'C', 'K', 'P', 'T', '1'};

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

GateParams zero_gate(std::size_t in, std::size_t hidden) {
  return {Matrix::Zero(hidden, in), Matrix::Zero(hidden, hidden)};
}

void check_gate(const GateParams& g, Eigen::Index hidden, Eigen::Index in, const char* name) {
  if (g.input.rows() != hidden || g.input.cols() != in || g.recurrent.rows() != hidden ||
      g.recurrent.cols() != hidden) {
    throw Error(std::string("GruCellParams: inconsistent shape in gate ") + name);
  }
}

Batch sigmoid_of(const Batch& a) {
  return a.unaryExpr([](double v) { return sigmoid(v); });
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint: truncated file");
  return v;
}

}  // namespace

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

GruCellParams GruCellParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  return {zero_gate(input_dim, hidden_dim), zero_gate(input_dim, hidden_dim),
          zero_gate(input_dim, hidden_dim)};
}

GruCellParams GruCellParams::random(std::size_t input_dim, std::size_t hidden_dim,
                                    Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  const auto in = static_cast<Eigen::Index>(input_dim);
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  GruCellParams p;
  for (GateParams* g : {&p.reset, &p.update, &p.candidate}) {
    g->input = uniform_matrix(h, in, bound, rng);
    g->recurrent = uniform_matrix(h, h, bound, rng);
  }
  return p;
}

void GruCellParams::validate() const {
  const Eigen::Index h = reset.input.rows();
  const Eigen::Index in = reset.input.cols();
  if (h == 0) throw Error("GruCellParams: zero hidden dimension");
  check_gate(reset, h, in, "reset");
  check_gate(update, h, in, "update");
  check_gate(candidate, h, in, "candidate");
}

std::vector<Matrix*> GruCellParams::matrices() {
  return {&reset.input, &reset.recurrent, &update.input,
          &update.recurrent, &candidate.input, &candidate.recurrent};
}

std::vector<const Matrix*> GruCellParams::matrices() const {
  return {&reset.input, &reset.recurrent, &update.input,
          &update.recurrent, &candidate.input, &candidate.recurrent};
}

GruStep gru_cell_forward(const GruCellParams& params, const Batch& input,
                         const Batch& prev_hidden) {
  const auto in = static_cast<Eigen::Index>(params.input_dim());
  const auto h = static_cast<Eigen::Index>(params.hidden_dim());
  if (input.rows() != in) throw Error("gru_cell_forward: input dimension mismatch");
  if (prev_hidden.rows() != h) throw Error("gru_cell_forward: hidden dimension mismatch");
  if (input.cols() != prev_hidden.cols()) throw Error("gru_cell_forward: batch size mismatch");

  GruStep s;
  s.input = input;
  s.prev_hidden = prev_hidden;
  s.reset = sigmoid_of(params.reset.input * input + params.reset.recurrent * prev_hidden);
  s.update = sigmoid_of(params.update.input * input + params.update.recurrent * prev_hidden);
  const Batch gated = prev_hidden.cwiseProduct(s.reset);
  s.candidate = (params.candidate.input * input + params.candidate.recurrent * gated)
                    .unaryExpr([](double v) { return std::tanh(v); });
  s.hidden = (1.0 - s.update.array()) * s.candidate.array() +
             s.update.array() * prev_hidden.array();
  return s;
}

GruTape gru_unroll(const GruCellParams& params, std::span<const Batch> inputs) {
  if (inputs.empty()) throw Error("gru_unroll: empty sequence");
  params.validate();
  GruTape tape;
  tape.steps.reserve(inputs.size());
  Batch h = Batch::Zero(static_cast<Eigen::Index>(params.hidden_dim()), inputs.front().cols());
  for (const Batch& x : inputs) {
    tape.steps.push_back(gru_cell_forward(params, x, h));
    h = tape.steps.back().hidden;
  }
  return tape;
}

SequenceForward gru_sequence_forward(const GruCellParams& params, const Matrix& out_weights,
                                     std::span<const Batch> inputs) {
  if (inputs.empty()) throw Error("gru_sequence_forward: empty sequence");
  if (out_weights.cols() != static_cast<Eigen::Index>(params.hidden_dim())) {
    throw Error("gru_sequence_forward: output weights do not match hidden dimension");
  }
  SequenceForward f;
  f.tape = gru_unroll(params, inputs);
  f.output = out_weights * f.tape.steps.back().hidden;
  return f;
}

GruCellParams gru_backward(const GruTape& tape, const GruCellParams& params,
                           std::span<const Batch> hidden_grads) {
  params.validate();
  if (tape.steps.empty()) throw Error("gru_backward: empty tape");
  if (hidden_grads.size() != tape.steps.size()) {
    throw Error("gru_backward: one hidden gradient slot per tape step required");
  }
  const auto h = static_cast<Eigen::Index>(params.hidden_dim());
  const auto in = static_cast<Eigen::Index>(params.input_dim());
  const Eigen::Index batch = tape.steps.front().hidden.cols();

  GruCellParams g = GruCellParams::zeros(params.input_dim(), params.hidden_dim());
  Batch carry = Batch::Zero(h, batch);  // dL/dh_t flowing back from step t+1

  for (std::size_t k = tape.steps.size(); k-- > 0;) {
    const GruStep& s = tape.steps[k];
    if (s.input.rows() != in || s.hidden.rows() != h || s.hidden.cols() != batch) {
      throw Error("gru_backward: tape does not match parameters");
    }
    Batch dh = carry;
    if (hidden_grads[k].size() != 0) {
      if (hidden_grads[k].rows() != h || hidden_grads[k].cols() != batch) {
        throw Error("gru_backward: hidden gradient shape mismatch");
      }
      dh += hidden_grads[k];
    }

    const auto z = s.update.array();
    const auto r = s.reset.array();
    const auto cand = s.candidate.array();
    const auto hp = s.prev_hidden.array();

    const Batch d_cand_pre = (dh.array() * (1.0 - z) * (1.0 - cand.square())).matrix();
    const Batch d_update_pre = (dh.array() * (hp - cand) * z * (1.0 - z)).matrix();
    const Batch gated = (hp * r).matrix();
    const Batch d_gated = params.candidate.recurrent.transpose() * d_cand_pre;
    const Batch d_reset_pre = (d_gated.array() * hp * r * (1.0 - r)).matrix();

    g.candidate.input.noalias() += d_cand_pre * s.input.transpose();
    g.candidate.recurrent.noalias() += d_cand_pre * gated.transpose();
    g.update.input.noalias() += d_update_pre * s.input.transpose();
    g.update.recurrent.noalias() += d_update_pre * s.prev_hidden.transpose();
    g.reset.input.noalias() += d_reset_pre * s.input.transpose();
    g.reset.recurrent.noalias() += d_reset_pre * s.prev_hidden.transpose();

    carry = (dh.array() * z).matrix();
    carry.array() += d_gated.array() * r;
    carry.noalias() += params.update.recurrent.transpose() * d_update_pre;
    carry.noalias() += params.reset.recurrent.transpose() * d_reset_pre;
  }
  return g;
}

GruGradients gru_sequence_backward(const GruTape& tape, const GruCellParams& params,
                                   const Matrix& out_weights, const Batch& output_grad) {
  if (tape.steps.empty()) throw Error("gru_sequence_backward: empty tape");
  const Batch& last = tape.steps.back().hidden;
  if (out_weights.cols() != last.rows() || output_grad.rows() != out_weights.rows() ||
      output_grad.cols() != last.cols()) {
    throw Error("gru_sequence_backward: tape/params mismatch");
  }
  std::vector<Batch> hidden_grads(tape.steps.size());
  hidden_grads.back() = out_weights.transpose() * output_grad;
  GruGradients grads;
  grads.cell = gru_backward(tape, params, hidden_grads);
  grads.out = output_grad * last.transpose();
  return grads;
}

Matrix sgd_step(const Matrix& param, const Matrix& grad, double lr) {
  Matrix out = param;
  sgd_apply(out, grad, lr);
  return out;
}

void sgd_apply(Matrix& param, const Matrix& grad, double lr) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw Error("sgd_step: shape mismatch");
  }
  if (!(lr > 0.0)) throw Error("sgd_step: learning rate must be positive");
  if (!grad.allFinite()) throw Error("sgd_step: non-finite gradient");
  param.noalias() -= lr * grad;
}

void save_checkpoint(const std::string& path, const std::vector<NamedMatrix>& mats) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(out, mats.size());
  for (const auto& [name, m] : mats) {
    write_pod<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

std::vector<NamedMatrix> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: bad magic in " + path);
  }
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<NamedMatrix> mats;
  mats.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint64_t>(in);
    if (len > 4096) throw Error("checkpoint: corrupt name length");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (rows > (1ULL << 24) || cols > (1ULL << 24)) throw Error("checkpoint: corrupt shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw Error("checkpoint: truncated file");
    mats.emplace_back(std::move(name), std::move(m));
  }
  return mats;
}

namespace {
constexpr const char* kCellNames[6] = {"Wr", "Ur", "Wz", "Uz", "Wh", "Uh"};
}

void append_cell(std::vector<NamedMatrix>& out, const std::string& prefix,
                 const GruCellParams& cell) {
  const auto mats = cell.matrices();
  for (std::size_t i = 0; i < mats.size(); ++i) out.emplace_back(prefix + kCellNames[i], *mats[i]);
}

const Matrix& find_matrix(const std::vector<NamedMatrix>& mats, const std::string& name) {
  for (const auto& [n, m] : mats) {
    if (n == name) return m;
  }
  throw Error("checkpoint: missing matrix " + name);
}

GruCellParams extract_cell(const std::vector<NamedMatrix>& mats, const std::string& prefix) {
  GruCellParams cell;
  auto slots = cell.matrices();
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = find_matrix(mats, prefix + kCellNames[i]);
  cell.validate();
  return cell;
}

}  // namespace dnt::nn
