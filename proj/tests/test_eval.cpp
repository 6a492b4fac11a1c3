#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tpred/eval.hpp"
#include "tpred/synth.hpp"

using namespace tpred;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

NamedPredictor constant_predictor(std::string name, double value, Index n) {
  return {std::move(name), [value, n](std::span<const Index> anchors) {
            return MatrixXd::Constant(n + 1, static_cast<Index>(anchors.size()), value);
          }};
}

LabeledSeries small_series(std::uint64_t seed, double seconds = 2500.0) {
  return featurize(synth::generate_trace(synth::bursty_user_profile(), seconds, seed), 1.0);
}

}  // namespace

TEST_CASE("rmse examples") {
  const std::vector<double> a = {1, 2, 3};
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(rmse(std::vector<double>{5}, std::vector<double>{3}) == 2.0);
  CHECK_THROWS_AS(rmse(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("rmse is sign symmetric and scales linearly") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd p(20), y(20);
    for (Index i = 0; i < 20; ++i) {
      p(i) = g(rng);
      y(i) = g(rng);
    }
    const VectorXd flipped = 2 * y - p;  // same errors with opposite sign
    CHECK(rmse(p, y) == doctest::Approx(rmse(flipped, y)));
    CHECK(rmse(3.5 * p, 3.5 * y) == doctest::Approx(3.5 * rmse(p, y)));
  }
}

TEST_CASE("relative gain") {
  CHECK(relative_gain_pct(2.0, 2.0) == 0.0);
  CHECK(relative_gain_pct(1.0, 2.0) == 50.0);
  CHECK(relative_gain_pct(1.0, 0.0) == 0.0);
}

TEST_CASE("bucket edges") {
  const auto e = default_bucket_edges();
  REQUIRE(e.size() == 12);
  CHECK(e[1] == doctest::Approx(0.2));
  CHECK(e[10] == doctest::Approx(2.0));
  CHECK(std::isinf(e.back()));
}

TEST_CASE("window SD") {
  VectorXd x(5);
  x << 1, 3, 5, 7, 9;
  CHECK(window_sd(x, 3, 3) == doctest::Approx(2.0));
  CHECK(window_sd(x, 2, 1) == 0.0);
  CHECK_THROWS(window_sd(x, 2, 3));
}

TEST_CASE("constant windows fall in the first bucket") {
  const VectorXd target = VectorXd::Constant(30, 4.0);
  std::vector<Index> anchors;
  for (Index a = 5; a < 29; ++a) anchors.push_back(a);
  const std::vector<NamedPredictor> preds = {constant_predictor("c", 4.0, 1)};
  const auto rows = sd_bucket_report(target, anchors, 5, 1, 2.0, preds, default_bucket_edges());
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].sd_fraction_lo == 0.0);
  CHECK(rows[0].windows == static_cast<Index>(anchors.size()));
  CHECK(rows[0].rmse == 0.0);
  CHECK_THROWS_WITH_AS(sd_bucket_report(target, anchors, 5, 1, 0.0, preds, default_bucket_edges()),
                       doctest::Contains("degenerate training data"), Error);
}

TEST_CASE("bucket assignment uses the window SD fraction") {
  // Window [1, 3] has SD sqrt(2); long-term SD 2 sqrt(2) puts it at 0.5.
  VectorXd target(4);
  target << 1, 3, 0, 0;
  const std::vector<Index> anchors = {2};
  const std::vector<double> edges = {0.0, 0.3, 1.0, kInf};
  const std::vector<NamedPredictor> preds = {constant_predictor("c", 0.0, 0)};
  const auto rows = sd_bucket_report(target, anchors, 2, 0, 2.0 * std::sqrt(2.0), preds, edges);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].sd_fraction_lo == 0.3);
  CHECK(rows[0].sd_fraction_hi == 1.0);
}

TEST_CASE("bucket errors add up to the overall error") {
  const auto s = small_series(3);
  const VectorXd target = s.features.row(kUplinkPackets).transpose();
  std::vector<Index> anchors;
  for (Index a = 8; a + 2 < target.size(); ++a) anchors.push_back(a);
  const std::vector<NamedPredictor> preds = {constant_predictor("mean", target.mean(), 2),
                                             {"persist", [&](std::span<const Index> an) {
                                                MatrixXd out(3, static_cast<Index>(an.size()));
                                                for (std::size_t j = 0; j < an.size(); ++j)
                                                  out.col(static_cast<Index>(j)).setConstant(target(an[j] - 1));
                                                return out;
                                              }}};
  const auto rows = sd_bucket_report(target, anchors, 8, 2, 1.3, preds, default_bucket_edges());
  for (const auto& p : preds) {
    const MatrixXd pred = p.predict(anchors);
    double total = 0;
    for (std::size_t j = 0; j < anchors.size(); ++j)
      total += (pred.col(static_cast<Index>(j)) - target.segment(anchors[j], 3)).squaredNorm();
    double from_buckets = 0;
    Index windows = 0;
    for (const auto& r : rows)
      if (r.scheme == p.scheme) {
        from_buckets += r.rmse * r.rmse * static_cast<double>(r.windows * 3);
        windows += r.windows;
        CHECK(r.squared_error == doctest::Approx(r.rmse * r.rmse * static_cast<double>(r.windows * 3)));
      }
    CHECK(windows == static_cast<Index>(anchors.size()));
    CHECK(from_buckets == doctest::Approx(total).epsilon(1e-9));
  }
}

TEST_CASE("scheme names") {
  for (Scheme s : {Scheme::persistence, Scheme::arima, Scheme::recurrent}) CHECK(parse_scheme(to_string(s)) == s);
  CHECK_THROWS(parse_scheme("lstm"));
}

TEST_CASE("observation/horizon sweep") {
  const auto s = small_series(5);
  SweepConfig c;
  c.m_values = {1, 3};
  c.n_values = {0, 4};
  c.schemes = {Scheme::persistence, Scheme::arima, Scheme::recurrent};
  c.hidden_dim = 4;
  c.train.epochs = 1;
  c.arima_grid = ArimaGrid::ranges(1, 1, 0);
  const auto r = observation_horizon_sweep(s, c);
  REQUIRE(r.cells.size() == 12);
  CHECK(r.cells[0].scheme == "persistence");
  CHECK(r.cells[11].scheme == "recurrent");
  REQUIRE(r.thresholds.size() == 2);

  // Persistence and ARIMA ignore m.
  for (const auto& a : r.cells)
    for (const auto& b : r.cells)
      if (a.scheme == b.scheme && a.n == b.n && a.scheme != "recurrent") CHECK(a.rmse == b.rmse);
  for (const auto& cell : r.cells)
    if (cell.scheme == "persistence") CHECK(cell.relative_gain_vs_persistence == 0.0);

  // m* is the smallest m at which the recurrent predictor beats persistence.
  for (const auto& th : r.thresholds) {
    double persist = 0;
    std::optional<Index> expect;
    for (const auto& cell : r.cells)
      if (cell.scheme == "persistence" && cell.n == th.n) persist = cell.rmse;
    for (const auto& cell : r.cells)
      if (cell.scheme == "recurrent" && cell.n == th.n && cell.rmse < persist && !expect) expect = cell.m;
    CHECK(th.m_star == expect);
  }

  c.jobs = 3;
  const auto again = observation_horizon_sweep(s, c);
  for (std::size_t i = 0; i < r.cells.size(); ++i) CHECK(r.cells[i].rmse == again.cells[i].rmse);

  SweepConfig big = c;
  big.m_values = {5000};
  CHECK_THROWS_WITH_AS(observation_horizon_sweep(s, big), doctest::Contains("(m=5000, n=0)"), Error);
}

TEST_CASE("SD bucket experiment") {
  const auto s = small_series(6, 4000.0);
  BucketExperimentConfig c;
  c.m = 6;
  c.masks = {FeatureMask::named(3), FeatureMask::named(5)};
  c.hidden_dim = 4;
  c.train.epochs = 1;
  c.arima_grid = ArimaGrid::ranges(1, 1, 1);
  const auto r = sd_bucket_experiment(s, c);
  REQUIRE(r.reports.size() == 4);
  CHECK(r.reports[0].scheme == "persistence");
  CHECK(r.reports[1].scheme == "arima");
  CHECK(r.reports[2].scheme == "recurrent:FS-3");
  CHECK(r.reports[3].scheme == "recurrent:FS-5");
  CHECK(r.long_term_sd > 0);
  for (const auto& rep : r.reports) {
    double sse = 0;
    Index w = 0;
    for (const auto& b : rep.buckets) {
      sse += b.squared_error;
      w += b.windows;
    }
    CHECK(rep.rmse == doctest::Approx(std::sqrt(sse / static_cast<double>(w))));
  }

  LabeledSeries flat = s;
  flat.features.row(kUplinkPackets).setConstant(2.0);
  CHECK_THROWS_WITH_AS(sd_bucket_experiment(flat, c), doctest::Contains("degenerate training data"), Error);
}

TEST_CASE("CSV writers") {
  EvalReport r;
  r.scheme = "persistence";
  r.tau = 10;
  r.m = 4;
  r.n = 5;
  r.feature_set = "FS-3";
  r.rmse = 1.5;
  std::ostringstream out;
  write_eval_csv(out, std::vector<EvalReport>{r});
  CHECK(out.str() == "scheme,tau,m,n,feature_set,rmse,relative_gain_pct\npersistence,10,4,5,FS-3,1.5,0\n");

  std::ostringstream b;
  write_bucket_csv(b, std::vector<BucketRow>{{"arima", 0.2, 0.4, 2.0, 3, 12.0}, {"arima", 2.0, kInf, 1.0, 1, 1.0}});
  CHECK(b.str() == "scheme,sd_fraction_lo,sd_fraction_hi,rmse\narima,0.2,0.4,2\narima,2,inf,1\n");

  std::ostringstream t;
  write_threshold_csv(t, std::vector<SweepThreshold>{{5, 4}, {20, std::nullopt}});
  CHECK(t.str() == "n,m_star\n5,4\n20,none\n");
}
