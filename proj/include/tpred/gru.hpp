#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "tpred/common.hpp"

namespace tpred {

enum class OutputHead { linear, sigmoid };
enum class LossKind { squared_error, cross_entropy };

/// Gated recurrent cell with an affine read-out of the final hidden state:
///
///   r  = S(Wr x + Ur h + br)
///   z  = S(Wz x + Uz h + bz)
///   h~ = tanh(Wh x + Uh (r o h) + bh)
///   h' = z o h + (1 - z) o h~
///
/// z keeps the previous state and 1 - z admits the candidate.
template <typename Scalar>
struct GruModel {
  Index input_dim = 0;
  Index hidden_dim = 0;
  Index output_dim = 0;
  OutputHead head = OutputHead::linear;

  Matrix<Scalar> input_reset, recur_reset;
  Vector<Scalar> bias_reset;
  Matrix<Scalar> input_update, recur_update;
  Vector<Scalar> bias_update;
  Matrix<Scalar> input_cand, recur_cand;
  Vector<Scalar> bias_cand;
  Matrix<Scalar> out_weight;
  Vector<Scalar> out_bias;

  static GruModel zeros(Index input_dim, Index hidden_dim, Index output_dim,
                        OutputHead head = OutputHead::linear) {
    GruModel m;
    m.input_dim = input_dim;
    m.hidden_dim = hidden_dim;
    m.output_dim = output_dim;
    m.head = head;
    for (auto* w : {&m.input_reset, &m.input_update, &m.input_cand}) w->setZero(hidden_dim, input_dim);
    for (auto* w : {&m.recur_reset, &m.recur_update, &m.recur_cand}) w->setZero(hidden_dim, hidden_dim);
    for (auto* b : {&m.bias_reset, &m.bias_update, &m.bias_cand}) b->setZero(hidden_dim);
    m.out_weight.setZero(output_dim, hidden_dim);
    m.out_bias.setZero(output_dim);
    return m;
  }

  /// Glorot-uniform weights, zero biases.
  static GruModel random(Index input_dim, Index hidden_dim, Index output_dim, std::uint64_t seed,
                         OutputHead head = OutputHead::linear) {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
      throw std::invalid_argument("GRU dimensions must be positive");
    GruModel m = zeros(input_dim, hidden_dim, output_dim, head);
    std::mt19937_64 rng(seed);
    const auto fill = [&](Matrix<Scalar>& w) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(u(rng));
    };
    for (auto* w : {&m.input_reset, &m.recur_reset, &m.input_update, &m.recur_update, &m.input_cand,
                    &m.recur_cand, &m.out_weight})
      fill(*w);
    return m;
  }

  Index parameter_count() const {
    return 3 * hidden_dim * (input_dim + hidden_dim + 1) + output_dim * (hidden_dim + 1);
  }
};

/// Calls f(name, param) for every parameter tensor in a fixed order.
template <typename Model, typename F>
void visit_parameters(Model& m, F&& f) {
  f(std::string_view("input_reset"), m.input_reset);
  f(std::string_view("recur_reset"), m.recur_reset);
  f(std::string_view("bias_reset"), m.bias_reset);
  f(std::string_view("input_update"), m.input_update);
  f(std::string_view("recur_update"), m.recur_update);
  f(std::string_view("bias_update"), m.bias_update);
  f(std::string_view("input_cand"), m.input_cand);
  f(std::string_view("recur_cand"), m.recur_cand);
  f(std::string_view("bias_cand"), m.bias_cand);
  f(std::string_view("out_weight"), m.out_weight);
  f(std::string_view("out_bias"), m.out_bias);
}

/// Pairwise visit over two models of identical shape.
template <typename A, typename B, typename F>
void visit_parameters(A& a, B& b, F&& f) {
  f(a.input_reset, b.input_reset);
  f(a.recur_reset, b.recur_reset);
  f(a.bias_reset, b.bias_reset);
  f(a.input_update, b.input_update);
  f(a.recur_update, b.recur_update);
  f(a.bias_update, b.bias_update);
  f(a.input_cand, b.input_cand);
  f(a.recur_cand, b.recur_cand);
  f(a.bias_cand, b.bias_cand);
  f(a.out_weight, b.out_weight);
  f(a.out_bias, b.out_bias);
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// Activations kept for backpropagation. Every matrix has one column per batch element.
template <typename Scalar>
struct GruTrace {
  std::vector<Matrix<Scalar>> hidden;  // hidden[0] = h0, hidden[t + 1] after step t
  std::vector<Matrix<Scalar>> reset, update, cand;
  Matrix<Scalar> pre_output;  // affine read-out of the final state
  Matrix<Scalar> output;      // after the head activation
};

namespace detail {
template <typename Derived>
auto sigmoid_array(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}
}  // namespace detail

/// Batched forward pass. `steps[t]` is input_dim x B; the initial state is zero.
template <typename Scalar>
GruTrace<Scalar> gru_forward(const GruModel<Scalar>& m, std::span<const Matrix<Scalar>> steps) {
  if (steps.empty()) throw std::invalid_argument("GRU needs at least one input step");
  const Index batch = steps.front().cols();
  GruTrace<Scalar> tr;
  tr.hidden.reserve(steps.size() + 1);
  tr.hidden.push_back(Matrix<Scalar>::Zero(m.hidden_dim, batch));
  for (const auto& x : steps) {
    if (x.rows() != m.input_dim || x.cols() != batch) throw Error("GRU input dimension mismatch");
    const auto& h = tr.hidden.back();
    Matrix<Scalar> r =
        detail::sigmoid_array(((m.input_reset * x + m.recur_reset * h).colwise() + m.bias_reset).eval());
    Matrix<Scalar> z =
        detail::sigmoid_array(((m.input_update * x + m.recur_update * h).colwise() + m.bias_update).eval());
    Matrix<Scalar> gated = r.cwiseProduct(h);
    Matrix<Scalar> c =
        ((m.input_cand * x + m.recur_cand * gated).colwise() + m.bias_cand).array().tanh().matrix();
    Matrix<Scalar> next = z.cwiseProduct(h) + (Scalar(1) - z.array()).matrix().cwiseProduct(c);
    tr.reset.push_back(std::move(r));
    tr.update.push_back(std::move(z));
    tr.cand.push_back(std::move(c));
    tr.hidden.push_back(std::move(next));
  }
  tr.pre_output = (m.out_weight * tr.hidden.back()).colwise() + m.out_bias;
  tr.output = m.head == OutputHead::sigmoid ? detail::sigmoid_array(tr.pre_output) : tr.pre_output;
  return tr;
}

/// Single-sequence convenience: `sequence` is input_dim x T.
template <typename Scalar>
struct GruOutput {
  Matrix<Scalar> hidden;  // hidden_dim x T
  Vector<Scalar> output;
};

template <typename Scalar>
GruOutput<Scalar> gru_forward(const GruModel<Scalar>& m, const Matrix<Scalar>& sequence) {
  std::vector<Matrix<Scalar>> steps;
  for (Index t = 0; t < sequence.cols(); ++t) steps.push_back(sequence.col(t));
  const auto tr = gru_forward<Scalar>(m, steps);
  GruOutput<Scalar> out;
  out.hidden.resize(m.hidden_dim, sequence.cols());
  for (Index t = 0; t < sequence.cols(); ++t) out.hidden.col(t) = tr.hidden[static_cast<std::size_t>(t + 1)];
  out.output = tr.output.col(0);
  return out;
}

/// Backpropagation through time from the gradient w.r.t. the pre-activation read-out.
/// Only the last `truncation` steps receive gradient (0 means all).
template <typename Scalar>
GruModel<Scalar> gru_backward(const GruModel<Scalar>& m, std::span<const Matrix<Scalar>> steps,
                              const GruTrace<Scalar>& tr, const Matrix<Scalar>& d_pre_output,
                              Index truncation = 0) {
  GruModel<Scalar> g = GruModel<Scalar>::zeros(m.input_dim, m.hidden_dim, m.output_dim, m.head);
  const Index t_len = static_cast<Index>(steps.size());
  const Index first = truncation > 0 ? std::max<Index>(0, t_len - truncation) : 0;

  g.out_weight.noalias() = d_pre_output * tr.hidden.back().transpose();
  g.out_bias = d_pre_output.rowwise().sum();
  Matrix<Scalar> dh = m.out_weight.transpose() * d_pre_output;

  for (Index t = t_len - 1; t >= first; --t) {
    const auto s = static_cast<std::size_t>(t);
    const auto& x = steps[s];
    const auto& h_prev = tr.hidden[s];
    const auto& r = tr.reset[s];
    const auto& z = tr.update[s];
    const auto& c = tr.cand[s];

    const Matrix<Scalar> d_z_pre =
        (dh.array() * (h_prev - c).array() * z.array() * (Scalar(1) - z.array())).matrix();
    const Matrix<Scalar> d_c_pre =
        (dh.array() * (Scalar(1) - z.array()) * (Scalar(1) - c.array().square())).matrix();
    const Matrix<Scalar> gated = r.cwiseProduct(h_prev);
    const Matrix<Scalar> d_gated = m.recur_cand.transpose() * d_c_pre;
    const Matrix<Scalar> d_r_pre =
        (d_gated.array() * h_prev.array() * r.array() * (Scalar(1) - r.array())).matrix();

    g.input_cand.noalias() += d_c_pre * x.transpose();
    g.recur_cand.noalias() += d_c_pre * gated.transpose();
    g.bias_cand += d_c_pre.rowwise().sum();
    g.input_update.noalias() += d_z_pre * x.transpose();
    g.recur_update.noalias() += d_z_pre * h_prev.transpose();
    g.bias_update += d_z_pre.rowwise().sum();
    g.input_reset.noalias() += d_r_pre * x.transpose();
    g.recur_reset.noalias() += d_r_pre * h_prev.transpose();
    g.bias_reset += d_r_pre.rowwise().sum();

    Matrix<Scalar> dh_prev = dh.cwiseProduct(z) + d_gated.cwiseProduct(r);
    dh_prev.noalias() += m.recur_reset.transpose() * d_r_pre;
    dh_prev.noalias() += m.recur_update.transpose() * d_z_pre;
    dh = std::move(dh_prev);
  }
  return g;
}

/// Batch loss (mean over batch columns of the per-sample loss) and the gradient w.r.t. the
/// pre-activation read-out. Squared error is sum over outputs of (y - target)^2.
template <typename Scalar>
Scalar output_loss(const GruTrace<Scalar>& tr, OutputHead head, const Matrix<Scalar>& targets, LossKind loss,
                   Matrix<Scalar>& d_pre_output) {
  const Scalar batch = static_cast<Scalar>(targets.cols());
  const Matrix<Scalar> diff = tr.output - targets;
  if (loss == LossKind::cross_entropy) {
    if (head != OutputHead::sigmoid) throw std::invalid_argument("cross-entropy needs a sigmoid head");
    const Scalar eps = Scalar(1e-12);
    const auto p = tr.output.array().max(eps).min(Scalar(1) - eps);
    const Scalar value =
        -(targets.array() * p.log() + (Scalar(1) - targets.array()) * (Scalar(1) - p).log()).sum() / batch;
    d_pre_output = diff / batch;
    return value;
  }
  d_pre_output = Scalar(2) * diff / batch;
  if (head == OutputHead::sigmoid)
    d_pre_output = (d_pre_output.array() * tr.output.array() * (Scalar(1) - tr.output.array())).matrix();
  return diff.squaredNorm() / batch;
}

/// Loss and full parameter gradient for one batch.
template <typename Scalar>
Scalar gru_loss_gradient(const GruModel<Scalar>& m, std::span<const Matrix<Scalar>> steps,
                         const Matrix<Scalar>& targets, LossKind loss, GruModel<Scalar>& grad,
                         Index truncation = 0) {
  const auto tr = gru_forward<Scalar>(m, steps);
  Matrix<Scalar> d_pre;
  const Scalar value = output_loss<Scalar>(tr, m.head, targets, loss, d_pre);
  grad = gru_backward<Scalar>(m, steps, tr, d_pre, truncation);
  return value;
}

template <typename Scalar>
Scalar gru_loss(const GruModel<Scalar>& m, std::span<const Matrix<Scalar>> steps, const Matrix<Scalar>& targets,
                LossKind loss) {
  const auto tr = gru_forward<Scalar>(m, steps);
  Matrix<Scalar> d_pre;
  return output_loss<Scalar>(tr, m.head, targets, loss, d_pre);
}

}  // namespace tpred
