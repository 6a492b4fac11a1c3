#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tpred/common.hpp"

namespace tpred {

struct Differenced {
  VectorXd values;   // length N - d
  VectorXd initial;  // first element of each level 0..d-1
};

Differenced difference(const VectorXd& series, int d);
/// Inverse of difference(): returns the original-scale sequence of length values.size() + d.
VectorXd integrate(const VectorXd& values, const VectorXd& initial, int d);

struct ArimaOrder {
  int p = 0, d = 0, q = 0;
  friend bool operator==(const ArimaOrder&, const ArimaOrder&) = default;
};

std::string to_string(const ArimaOrder& order);

/// X^(d)_t = intercept + sum ar_i X^(d)_{t-i} + sum ma_j e_{t-j} + e_t.
/// The intercept is only estimated for d == 0.
struct ArimaModel {
  int p = 0, d = 0, q = 0;
  VectorXd ar_coeffs;
  VectorXd ma_coeffs;
  double intercept = 0.0;
  double residual_variance = 0.0;

  ArimaOrder order() const { return {p, d, q}; }
};

/// Two-stage long-autoregression least squares. Throws Error on short or degenerate input.
ArimaModel arima_fit(const VectorXd& series, int p, int d, int q);

/// Forecasts for the n + 1 values following `history`.
VectorXd arima_forecast(const ArimaModel& model, const VectorXd& history, int n);

/// Precomputes differencing levels and in-sample residuals over a whole series so that
/// multi-step forecasts from any anchor cost O(n (p + q + d)).
class ArimaRollingForecaster {
 public:
  ArimaRollingForecaster(ArimaModel model, VectorXd series);

  /// Forecasts series[anchor .. anchor + n] from series[0 .. anchor).
  VectorXd forecast(Index anchor, int n) const;
  /// One-step-ahead errors (actual - predicted) for series[start ..].
  VectorXd one_step_errors(Index start) const;
  Index min_anchor() const;

  const ArimaModel& model() const { return model_; }

 private:
  ArimaModel model_;
  VectorXd series_;
  std::vector<VectorXd> levels_;  // levels_[k] is the k-th difference, k = 0..d
  VectorXd residuals_;            // aligned with levels_[d]
};

struct ArimaGrid {
  std::vector<ArimaOrder> orders;

  static ArimaGrid ranges(int p_max, int d_max, int q_max);
  static ArimaGrid defaults() { return ranges(5, 2, 5); }
};

struct CandidateScore {
  ArimaOrder order;
  std::optional<double> valid_rmse;  // empty when the fit failed
  std::string failure;
};

struct GridSearchResult {
  ArimaModel model;
  double valid_rmse = 0.0;
  std::vector<CandidateScore> candidates;  // grid order
};

/// Fits every order on `train`, scores one-step-ahead RMSE over `valid` (history includes
/// train), and returns the best. Candidates run on up to `jobs` threads.
GridSearchResult arima_grid_search(const VectorXd& train, const VectorXd& valid, const ArimaGrid& grid,
                                   int jobs = 1);

/// Copies the last observation column into every target column.
MatrixXd persistence_forecast(const MatrixXd& observations, Index n);

}  // namespace tpred
