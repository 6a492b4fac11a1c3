#include <doctest.h>

#include <cmath>
#include <random>

#include "tpred/gru.hpp"
#include "tpred/normalizer.hpp"
#include "tpred/recurrent.hpp"

using namespace tpred;

namespace {

MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

double max_gradient_error(const GruModel<double>& model, const std::vector<MatrixXd>& steps, const MatrixXd& targets,
                          LossKind loss) {
  GruModel<double> grad;
  gru_loss_gradient<double>(model, steps, targets, loss, grad);
  GruModel<double> probe = model;
  double diff2 = 0, scale2 = 0;
  visit_parameters(probe, grad, [&](auto& p, auto& g) {
    for (Index i = 0; i < p.size(); ++i) {
      const double keep = p.data()[i], h = 1e-5;
      p.data()[i] = keep + h;
      const double up = gru_loss<double>(probe, steps, targets, loss);
      p.data()[i] = keep - h;
      const double down = gru_loss<double>(probe, steps, targets, loss);
      p.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff2 += (numeric - g.data()[i]) * (numeric - g.data()[i]);
      scale2 += numeric * numeric;
    }
  });
  return std::sqrt(diff2 / std::max(scale2, 1e-24));
}

}  // namespace

TEST_CASE("zero model emits the output bias") {
  auto m = GruModel<double>::zeros(3, 5, 2);
  m.out_bias << 1.5, -2.0;
  std::mt19937_64 rng(1);
  const MatrixXd seq = random_matrix(3, 4, rng);
  const auto out = gru_forward(m, seq);
  CHECK(out.hidden.isZero());
  CHECK(out.output(0) == 1.5);
  CHECK(out.output(1) == -2.0);

  std::vector<MatrixXd> steps = {seq.col(0)};
  const auto tr = gru_forward<double>(m, steps);
  CHECK((tr.reset[0].array() == 0.5).all());
  CHECK((tr.update[0].array() == 0.5).all());
}

TEST_CASE("a saturated update gate carries the state") {
  auto m = GruModel<double>::zeros(1, 1, 1);
  m.bias_cand(0) = 1.0;
  m.input_update(0, 0) = 1e3;
  // Step one has x = 0, so z = 0.5 and the state moves; step two saturates z.
  std::vector<MatrixXd> steps = {MatrixXd::Zero(1, 1), MatrixXd::Constant(1, 1, 3.0)};
  const auto tr = gru_forward<double>(m, steps);
  CHECK(tr.hidden[1](0, 0) == doctest::Approx(0.5 * std::tanh(1.0)));
  CHECK(tr.hidden[2](0, 0) == doctest::Approx(tr.hidden[1](0, 0)).epsilon(1e-12));
}

TEST_CASE("BPTT matches central differences") {
  std::mt19937_64 rng(77);
  for (int inst = 0; inst < 20; ++inst) {
    auto m = GruModel<double>::random(2, 4, 3, 500 + static_cast<std::uint64_t>(inst));
    for (auto* b : {&m.bias_reset, &m.bias_update, &m.bias_cand, &m.out_bias}) *b = random_matrix(b->size(), 1, rng, 0.5);
    std::vector<MatrixXd> steps;
    for (int t = 0; t < 3; ++t) steps.push_back(random_matrix(2, 3, rng));
    CHECK(max_gradient_error(m, steps, random_matrix(3, 3, rng), LossKind::squared_error) < 1e-4);
  }
}

TEST_CASE("BPTT with a sigmoid head under both losses") {
  std::mt19937_64 rng(78);
  for (LossKind loss : {LossKind::squared_error, LossKind::cross_entropy}) {
    auto m = GruModel<double>::random(3, 4, 1, 8, OutputHead::sigmoid);
    std::vector<MatrixXd> steps;
    for (int t = 0; t < 5; ++t) steps.push_back(random_matrix(3, 4, rng));
    MatrixXd labels(1, 4);
    labels << 1, 0, 0, 1;
    CHECK(max_gradient_error(m, steps, labels, loss) < 1e-4);
  }
  auto linear = GruModel<double>::random(1, 2, 1, 3);
  std::vector<MatrixXd> steps = {MatrixXd::Ones(1, 1)};
  CHECK_THROWS_AS(gru_loss<double>(linear, steps, MatrixXd::Ones(1, 1), LossKind::cross_entropy), std::invalid_argument);
}

TEST_CASE("truncated BPTT leaves early-step gradient out") {
  std::mt19937_64 rng(5);
  auto m = GruModel<double>::random(2, 3, 1, 4);
  std::vector<MatrixXd> steps;
  for (int t = 0; t < 6; ++t) steps.push_back(random_matrix(2, 1, rng));
  const auto tr = gru_forward<double>(m, steps);
  const MatrixXd d = MatrixXd::Ones(1, 1);
  const auto full = gru_backward<double>(m, steps, tr, d, 0);
  const auto all_steps = gru_backward<double>(m, steps, tr, d, 6);
  const auto one = gru_backward<double>(m, steps, tr, d, 1);
  CHECK(full.input_cand == all_steps.input_cand);
  CHECK(one.out_weight == full.out_weight);
  CHECK(one.input_cand != full.input_cand);
  // With one step the candidate input gradient only sees the last input.
  const MatrixXd last = one.input_cand;
  CHECK(last.col(0).cwiseQuotient(last.col(1)).isApprox(
      VectorXd::Constant(3, steps[5](0, 0) / steps[5](1, 0)), 1e-9));
}

TEST_CASE("hidden state stays within max(|h_prev|, 1)") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = GruModel<double>::random(3, 6, 1, 60 + static_cast<std::uint64_t>(trial));
    for (auto* w : {&m.recur_cand, &m.input_cand}) *w *= 5.0;
    const MatrixXd seq = random_matrix(3, 30, rng, 10.0);
    const auto out = gru_forward(m, seq);
    VectorXd prev = VectorXd::Zero(6);
    for (Index t = 0; t < seq.cols(); ++t) {
      const VectorXd h = out.hidden.col(t);
      CHECK((h.array().abs() <= prev.array().abs().max(1.0) + 1e-15).all());
      prev = h;
    }
  }
}

TEST_CASE("input dimension is checked") {
  const auto m = GruModel<double>::random(2, 3, 1, 1);
  CHECK_THROWS_AS(gru_forward(m, MatrixXd(MatrixXd::Ones(3, 4))), Error);
  CHECK_THROWS_AS(GruModel<double>::random(0, 3, 1, 1), std::invalid_argument);
}

TEST_CASE("single-precision instantiation") {
  auto m = GruModel<float>::random(2, 3, 1, 2);
  const Matrix<float> seq = Matrix<float>::Ones(2, 4);
  const auto out = gru_forward(m, seq);
  CHECK(std::isfinite(out.output(0)));
}

TEST_CASE("normalizer examples") {
  MatrixXd col(1, 2);
  col << 0, 10;
  const auto n = fit_normalizer<double>(col);
  CHECK(n.mean(0) == 5.0);
  CHECK(n.sd(0) == doctest::Approx(7.0710678));
  CHECK(n.apply(MatrixXd::Constant(1, 1, 10.0))(0, 0) == doctest::Approx(0.70710678));

  const auto flat = fit_normalizer<double>(MatrixXd::Constant(1, 5, 3.0));
  CHECK(flat.sd(0) == Normalizer<double>::kSdFloor);
  CHECK(flat.apply(MatrixXd::Constant(1, 1, 3.0))(0, 0) == 0.0);

  std::mt19937_64 rng(2);
  const MatrixXd data = random_matrix(4, 50, rng, 30.0);
  const auto fit = fit_normalizer<double>(data);
  CHECK((fit.invert(fit.apply(data)) - data).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(fit_normalizer<double>(MatrixXd::Ones(2, 1)), std::invalid_argument);
}

TEST_CASE("training learns a constant target") {
  SequenceDataset ds;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 64; ++i) ds.observations.push_back(random_matrix(1, 3, rng));
  ds.targets = MatrixXd::Constant(1, 64, 0.7);
  TrainConfig c;
  c.epochs = 200;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  const auto r = gru_train(GruModel<double>::random(1, 4, 1, 1), ds, c);
  CHECK(r.loss_curve.back() < 1e-4);
}

TEST_CASE("different seeds give different weights that both beat persistence on a sinusoid") {
  MatrixXd series(1, 600);
  for (Index t = 0; t < series.cols(); ++t) series(0, t) = std::sin(0.3 * static_cast<double>(t));
  const auto pairs = make_windows(series, 6, 0);
  double persist = 0;
  for (const auto& p : pairs) persist += std::pow(p.targets(0, 0) - p.observations(0, 5), 2);
  persist /= static_cast<double>(pairs.size());

  std::vector<GruModel<double>> models;
  for (std::uint64_t seed : {1, 2}) {
    TrainConfig c;
    c.epochs = 40;
    c.learning_rate = 1e-2;
    c.seed = seed;
    const auto r = gru_train(GruModel<double>::random(1, 8, 1, seed), pairs, c);
    CHECK(r.loss_curve.back() < persist);
    models.push_back(r.model);
  }
  CHECK(models[0].recur_cand != models[1].recur_cand);
}

TEST_CASE("training is reproducible") {
  std::mt19937_64 rng(4);
  const auto pairs = make_windows(random_matrix(2, 200, rng), 4, 1);
  TrainConfig c;
  c.epochs = 3;
  const auto a = gru_train(GruModel<double>::random(2, 5, 4, 9), pairs, c);
  const auto b = gru_train(GruModel<double>::random(2, 5, 4, 9), pairs, c);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.model.recur_update == b.model.recur_update);
}

TEST_CASE("a huge learning rate diverges") {
  std::mt19937_64 rng(6);
  const auto pairs = make_windows(random_matrix(1, 300, rng, 100.0), 3, 0);
  TrainConfig c;
  c.epochs = 50;
  c.learning_rate = 1e6;
  CHECK_THROWS_WITH_AS(gru_train(GruModel<double>::random(1, 4, 1, 1), pairs, c),
                       doctest::Contains("learning rate"), Error);
}

TEST_CASE("batched prediction equals per-sequence forward passes") {
  std::mt19937_64 rng(12);
  const auto m = GruModel<double>::random(2, 5, 3, 2);
  std::vector<MatrixXd> seqs;
  for (int i = 0; i < 37; ++i) seqs.push_back(random_matrix(2, 4, rng));
  const MatrixXd batched = gru_predict(m, seqs, 8);
  for (int i = 0; i < 37; ++i) CHECK((batched.col(i) - gru_forward(m, seqs[static_cast<std::size_t>(i)]).output).norm() < 1e-12);
}
