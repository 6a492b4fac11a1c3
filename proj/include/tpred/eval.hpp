#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpred/arima.hpp"
#include "tpred/ingest.hpp"
#include "tpred/recurrent.hpp"

namespace tpred {

double rmse(std::span<const double> predicted, std::span<const double> actual);

template <class A, class B>
double rmse(const Eigen::MatrixBase<A>& predicted, const Eigen::MatrixBase<B>& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw std::invalid_argument("rmse: shape mismatch");
  if (predicted.size() == 0) throw std::invalid_argument("rmse: empty input");
  return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(predicted.size()));
}

/// 100 (1 - rmse / rmse_persistence).
double relative_gain_pct(double rmse_value, double rmse_persistence);

/// 0, 0.2, ..., 2.0, inf.
std::vector<double> default_bucket_edges();

/// Maps anchors (first target column) to (n + 1) x anchors forecasts of f1.
using AnchorPredictor = std::function<MatrixXd(std::span<const Index> anchors)>;

struct NamedPredictor {
  std::string scheme;
  AnchorPredictor predict;
};

struct BucketRow {
  std::string scheme;
  double sd_fraction_lo = 0.0;
  double sd_fraction_hi = 0.0;
  double rmse = 0.0;
  Index windows = 0;
  double squared_error = 0.0;  // summed over the bucket's windows and steps
};

/// Sample SD of target[anchor - m, anchor); zero when m == 1.
double window_sd(const VectorXd& target, Index anchor, Index m);

/// Assigns each anchor to the bucket [lo, hi) holding window_sd / long_term_sd and scores every
/// predictor per bucket. Empty buckets are omitted. Rows are grouped by predictor, then bucket.
std::vector<BucketRow> sd_bucket_report(const VectorXd& target, std::span<const Index> anchors, Index m, Index n,
                                        double long_term_sd, std::span<const NamedPredictor> predictors,
                                        std::span<const double> edges);

struct EvalReport {
  std::string scheme;
  double tau = 0.0;
  Index m = 0;
  Index n = 0;
  std::string feature_set;
  double rmse = 0.0;
  double relative_gain_vs_persistence = 0.0;
  std::vector<BucketRow> buckets;
};

enum class Scheme { persistence, arima, recurrent };
std::string to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);

struct SweepConfig {
  std::vector<Index> m_values = {1, 2, 4, 8, 16};
  std::vector<Index> n_values = {5, 20, 60};
  std::vector<Scheme> schemes = {Scheme::persistence, Scheme::recurrent};
  FeatureMask mask = FeatureMask::named(3);
  Index hidden_dim = 16;
  TrainConfig train;
  ArimaGrid arima_grid = ArimaGrid::ranges(2, 1, 2);
  double train_frac = 0.6;
  double valid_frac = 0.2;
  int jobs = 1;
};

struct SweepThreshold {
  Index n = 0;
  std::optional<Index> m_star;  // empty when the recurrent predictor never wins
};

struct SweepResult {
  std::vector<EvalReport> cells;  // ordered by (scheme, m, n)
  std::vector<SweepThreshold> thresholds;
};

/// Trains and scores each (m, n, scheme) cell on the test partition. All cells with the same n
/// share one set of test anchors, so persistence and ARIMA are constant across m.
SweepResult observation_horizon_sweep(const LabeledSeries& series, const SweepConfig& config);

struct BucketExperimentConfig {
  Index m = 10;
  Index n = 0;
  std::vector<FeatureMask> masks = {FeatureMask::named(3)};
  bool include_arima = true;
  Index hidden_dim = 16;
  TrainConfig train;
  ArimaGrid arima_grid = ArimaGrid::ranges(2, 1, 2);
  double train_frac = 0.6;
  double valid_frac = 0.2;
  std::vector<double> edges = default_bucket_edges();
  int jobs = 1;
};

struct BucketExperiment {
  std::vector<EvalReport> reports;  // persistence first, then ARIMA, then one per mask
  std::vector<BucketRow> buckets;
  double long_term_sd = 0.0;
};

/// Per-scheme overall and SD-bucketed f1 RMSE on the test partition.
BucketExperiment sd_bucket_experiment(const LabeledSeries& series, const BucketExperimentConfig& config);

void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports);
void write_bucket_csv(std::ostream& out, std::span<const BucketRow> rows);
void write_threshold_csv(std::ostream& out, std::span<const SweepThreshold> thresholds);

}  // namespace tpred
