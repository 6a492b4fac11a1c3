#include <doctest.h>

#include "tpred/eval.hpp"
#include "tpred/recurrent.hpp"
#include "tpred/synth.hpp"

using namespace tpred;

namespace {

RecurrentForecaster zero_forecaster(Index m, Index n, const FeatureMask& mask, double bias) {
  const Index f = mask.count();
  RecurrentForecaster out;
  out.shape = {m, n, mask, 1.0};
  out.model = GruModel<double>::zeros(f, 3, f * (n + 1));
  out.model.out_bias.setConstant(bias);
  out.normalizer.mean = VectorXd::LinSpaced(f, 10.0, 20.0);
  out.normalizer.sd = VectorXd::Constant(f, 2.0);
  return out;
}

}  // namespace

TEST_CASE("zero-weight forecaster repeats the de-normalised bias") {
  const auto mask = FeatureMask::named(5);
  const auto f = zero_forecaster(3, 2, mask, 0.5);
  const MatrixXd fc = gru_forecast(f, MatrixXd::Random(2, 3), 2, mask);
  REQUIRE(fc.rows() == 2);
  REQUIRE(fc.cols() == 3);
  for (Index k = 0; k < 3; ++k) {
    CHECK(fc(0, k) == doctest::Approx(11.0));
    CHECK(fc(1, k) == doctest::Approx(21.0));
  }
}

TEST_CASE("forecasts are clamped at zero") {
  const auto mask = FeatureMask::named(3);
  const auto f = zero_forecaster(2, 0, mask, -100.0);
  const MatrixXd fc = gru_forecast(f, MatrixXd::Ones(1, 2), 0, mask);
  REQUIRE(fc.size() == 1);
  CHECK(fc(0, 0) == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  const auto mask = FeatureMask::named(3);
  const auto f = zero_forecaster(2, 1, mask, 0.0);
  CHECK_THROWS_AS(gru_forecast(f, MatrixXd::Ones(1, 3), 1, mask), Error);
  CHECK_THROWS_AS(gru_forecast(f, MatrixXd::Ones(1, 2), 2, mask), Error);
  CHECK_THROWS_AS(gru_forecast(f, MatrixXd::Ones(2, 2), 1, FeatureMask::named(5)), Error);
  const std::vector<Index> early = {1};
  CHECK_THROWS_AS(gru_forecast_batch(f, MatrixXd::Ones(1, 10), early), Error);
}

TEST_CASE("batched forecasts agree with single-window forecasts") {
  const auto s = featurize(synth::generate_trace(synth::bursty_user_profile(), 3000.0, 4), 1.0);
  const auto mask = FeatureMask::named(5);
  const MatrixXd masked = apply_mask(s, mask);
  TrainConfig c;
  c.epochs = 2;
  const auto f = train_recurrent_forecaster(masked.leftCols(2000), nullptr, {4, 2, mask, 1.0}, 6, c);
  const std::vector<Index> anchors = {4, 100, 2500, 2997};
  const MatrixXd batch = gru_forecast_batch(f, masked, anchors);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const MatrixXd one = gru_forecast(f, masked.middleCols(anchors[i] - 4, 4), 2, mask);
    CHECK((batch.col(static_cast<Index>(i)) - one.reshaped()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("trained forecaster beats persistence on MMPP data") {
  const auto s = featurize(synth::generate_trace(synth::bursty_user_profile(), 12000.0, 21), 1.0);
  const auto parts = split_series(s, 0.6, 0.2);
  const auto mask = FeatureMask::named(3);
  const MatrixXd train = apply_mask(parts.train, mask), valid = apply_mask(parts.valid, mask),
                 test = apply_mask(parts.test, mask);
  TrainConfig c;
  c.epochs = 8;
  TrainResult curves;
  const auto f = train_recurrent_forecaster(train, &valid, {20, 0, mask, 1.0}, 16, c, &curves);
  CHECK(curves.valid_curve.size() == curves.loss_curve.size());

  std::vector<Index> anchors;
  for (Index a = 20; a < test.cols(); ++a) anchors.push_back(a);
  const MatrixXd pred = gru_forecast_batch(f, test, anchors);
  VectorXd actual(static_cast<Index>(anchors.size())), persist(actual.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    actual(static_cast<Index>(i)) = test(0, anchors[i]);
    persist(static_cast<Index>(i)) = test(0, anchors[i] - 1);
  }
  CHECK(rmse(pred.row(0).transpose(), actual) < rmse(persist, actual));
}

TEST_CASE("dataset flattening is column-major over the target matrix") {
  MatrixXd series(2, 6);
  series << 0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15;
  const auto pairs = make_windows(series, 2, 1);
  const auto ds = to_dataset(pairs);
  REQUIRE(ds.size() == 3);
  CHECK(ds.targets.rows() == 4);
  CHECK(ds.targets(0, 0) == 2);
  CHECK(ds.targets(1, 0) == 12);
  CHECK(ds.targets(2, 0) == 3);
  CHECK(ds.targets(3, 0) == 13);
}
