#include <doctest.h>

#include <random>
#include <sstream>

#include "tpred/burst.hpp"
#include "tpred/synth.hpp"

using namespace tpred;

TEST_CASE("persistence baseline shifts labels by one") {
  CHECK(persistence_burst_baseline(std::vector<int>{0, 1, 1, 0}) == std::vector<int>{0, 0, 1, 1});
  CHECK(persistence_burst_baseline(std::vector<int>{0, 0, 0}) == std::vector<int>{0, 0, 0});
  const std::vector<int> alt = {0, 1, 0, 1};
  CHECK(confusion(persistence_burst_baseline(alt), alt).recall_burst() == 0.0);
}

TEST_CASE("threshold sweep boundaries") {
  const std::vector<double> p = {0.9, 0.1};
  const std::vector<int> y = {1, 0};
  const std::vector<double> mid = {0.5};
  const auto s = sweep_thresholds(p, y, mid);
  CHECK(s[0].recall_burst == 1.0);
  CHECK(s[0].recall_nonburst == 1.0);
  const std::vector<double> zero = {0.0};
  CHECK(sweep_thresholds(p, y, zero)[0].recall_burst == 1.0);
  CHECK(sweep_thresholds(p, y, zero)[0].recall_nonburst == 0.0);
  const std::vector<double> above = {1.0 + 1e-9};
  CHECK(sweep_thresholds(p, y, above)[0].recall_burst == 0.0);
  CHECK(sweep_thresholds(p, y, above)[0].recall_nonburst == 1.0);
  const std::vector<int> single = {1, 1};
  CHECK_THROWS_AS(sweep_thresholds(p, single, mid), Error);
}

TEST_CASE("the decision rule is inclusive at the threshold") {
  const std::vector<double> p = {0.5, 0.2};
  const std::vector<int> y = {1, 0};
  const std::vector<double> th = {0.5};
  CHECK(sweep_thresholds(p, y, th)[0].recall_burst == 1.0);
}

TEST_CASE("sweep matches a direct confusion count") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> p(500);
  std::vector<int> y(500);
  for (std::size_t i = 0; i < p.size(); ++i) {
    y[i] = u(rng) < 0.3;
    p[i] = std::clamp(u(rng) * 0.6 + (y[i] ? 0.3 : 0.0), 0.0, 1.0);
  }
  const auto grid = log_spaced_thresholds(50, 1e-3, 1.0);
  const auto sweep = sweep_thresholds(p, y, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<int> pred(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) pred[i] = p[i] >= grid[k];
    const auto c = confusion(pred, y);
    CHECK(c.total() == 500);
    CHECK(sweep[k].recall_burst == c.recall_burst());
    CHECK(sweep[k].recall_nonburst == c.recall_nonburst());
    CHECK(sweep[k].accuracy == c.accuracy());
    if (k > 0) {
      CHECK(sweep[k].recall_burst <= sweep[k - 1].recall_burst);
      CHECK(sweep[k].recall_nonburst >= sweep[k - 1].recall_nonburst);
    }
  }
}

TEST_CASE("threshold grid") {
  const auto g = log_spaced_thresholds();
  REQUIRE(g.size() == 200);
  CHECK(g.front() == doctest::Approx(1e-3));
  CHECK(g.back() == doctest::Approx(1.0));
  CHECK(std::is_sorted(g.begin(), g.end()));
  CHECK_THROWS(log_spaced_thresholds(1));
}

TEST_CASE("crossover interpolation") {
  const std::vector<BurstSweepPoint> s = {{0.0, 1.0, 0.0, 0.0}, {1.0, 0.0, 1.0, 0.0}};
  const auto c = find_crossover(s);
  CHECK(c.threshold == doctest::Approx(0.5));
  CHECK(c.recall == doctest::Approx(0.5));
  const std::vector<BurstSweepPoint> never = {{0.1, 1.0, 0.1, 0.0}, {0.2, 0.9, 0.2, 0.0}};
  CHECK_THROWS_WITH_AS(find_crossover(never), doctest::Contains("no crossover in grid"), Error);
}

TEST_CASE("zero-weight predictor outputs one half") {
  BurstPredictor p;
  p.m = 3;
  p.mask = FeatureMask::named(3);
  p.model = GruModel<double>::zeros(1, 4, 1, OutputHead::sigmoid);
  p.normalizer = Normalizer<double>::identity(1);
  const std::vector<Index> anchors = {3, 5, 9};
  const VectorXd probs = burst_probabilities(p, MatrixXd::Random(1, 10), anchors);
  CHECK((probs.array() == 0.5).all());
}

TEST_CASE("single-class training labels are rejected") {
  const MatrixXd x = MatrixXd::Random(1, 50);
  const std::vector<int> all(50, 1);
  BurstTrainOptions o;
  o.m = 3;
  o.train.epochs = 1;
  CHECK_THROWS_WITH_AS(train_burst_predictor(x, all, o), doctest::Contains("degenerate labels"), Error);
}

TEST_CASE("burst dataset pairs each window with the following label") {
  MatrixXd x(1, 6);
  x << 0, 1, 2, 3, 4, 5;
  const std::vector<int> y = {0, 0, 1, 0, 1, 1};
  const auto ds = burst_dataset(x, y, 2);
  REQUIRE(ds.size() == 4);
  CHECK(ds.observations[0](0, 1) == 1);
  CHECK(ds.targets(0, 0) == 1);
  CHECK(ds.targets(0, 3) == 1);
}

TEST_CASE("trained predictor ranks bursts above quiet intervals") {
  const auto s = label_bursts(featurize(synth::generate_trace(synth::bursty_user_profile(), 6000.0, 8), 1.0), 2.0);
  const auto parts = split_series(s, 0.7, 0.1);
  BurstTrainOptions o;
  o.m = 8;
  o.mask = FeatureMask::named(5);
  o.train.epochs = 4;
  const auto p = train_burst_predictor(apply_mask(parts.train, o.mask), parts.train.burst_labels, o);
  const MatrixXd test = apply_mask(parts.test, o.mask);
  std::vector<Index> anchors;
  double burst = 0, quiet = 0;
  Index nb = 0, nq = 0;
  for (Index a = o.m; a < test.cols(); ++a) anchors.push_back(a);
  const VectorXd probs = burst_probabilities(p, test, anchors);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (parts.test.burst_labels[static_cast<std::size_t>(anchors[i])]) {
      burst += probs(static_cast<Index>(i));
      ++nb;
    } else {
      quiet += probs(static_cast<Index>(i));
      ++nq;
    }
  }
  CHECK(burst / static_cast<double>(nb) > quiet / static_cast<double>(nq));
  CHECK((probs.array() >= 0).all());
  CHECK((probs.array() <= 1).all());
}

TEST_CASE("sweep CSV layout") {
  const std::vector<BurstSweepPoint> s = {{0.25, 1.0, 0.5, 0.75}};
  std::ostringstream out;
  write_sweep_csv(out, s);
  CHECK(out.str() == "threshold,recall_burst,recall_nonburst,accuracy\n0.25,1,0.5,0.75\n");
}
