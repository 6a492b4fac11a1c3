#include "tpred/arima.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <tuple>

#include <Eigen/Eigenvalues>

namespace tpred {

namespace {

int long_ar_order(Index n, int p, int q) {
  const int by_length = static_cast<int>(std::ceil(10.0 * std::log10(static_cast<double>(n))));
  const int cap = static_cast<int>(n / 4);
  return std::max(p + q, std::min(by_length, cap));
}

struct LeastSquares {
  VectorXd coeffs;
  VectorXd residuals;
};

LeastSquares solve_ls(const MatrixXd& design, const VectorXd& target) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) throw Error("degenerate series");
  LeastSquares ls;
  ls.coeffs = qr.solve(target);
  ls.residuals = target - design * ls.coeffs;
  if (!ls.coeffs.allFinite()) throw Error("degenerate series");
  return ls;
}

bool ma_invertible(const VectorXd& ma) {
  const Index q = ma.size();
  if (q == 0) return true;
  // Companion matrix of z^q + b1 z^(q-1) + ... + bq; invertible iff all roots lie inside the unit disk.
  MatrixXd companion = MatrixXd::Zero(q, q);
  companion.row(0) = -ma.transpose();
  if (q > 1) companion.bottomLeftCorner(q - 1, q - 1).setIdentity();
  Eigen::EigenSolver<MatrixXd> es(companion, false);
  return es.eigenvalues().cwiseAbs().maxCoeff() < 1.0 - 1e-6;
}

/// Conditional residual recursion on the differenced series; residuals before index p are zero.
VectorXd residual_recursion(const ArimaModel& model, const VectorXd& y) {
  const Index n = y.size();
  VectorXd eps = VectorXd::Zero(n);
  for (Index t = model.p; t < n; ++t) {
    double pred = model.intercept;
    for (int i = 1; i <= model.p; ++i) pred += model.ar_coeffs(i - 1) * y(t - i);
    for (int j = 1; j <= model.q && t - j >= 0; ++j) pred += model.ma_coeffs(j - 1) * eps(t - j);
    eps(t) = y(t) - pred;
  }
  return eps;
}

}  // namespace

Differenced difference(const VectorXd& series, int d) {
  if (d < 0) throw std::invalid_argument("difference order must be non-negative");
  if (d >= series.size() && d > 0) throw Error("difference order must be below series length");
  Differenced out;
  out.initial.resize(d);
  VectorXd cur = series;
  for (int k = 0; k < d; ++k) {
    out.initial(k) = cur(0);
    const Index n = cur.size();
    VectorXd next = cur.tail(n - 1) - cur.head(n - 1);
    cur = std::move(next);
  }
  out.values = std::move(cur);
  return out;
}

VectorXd integrate(const VectorXd& values, const VectorXd& initial, int d) {
  if (d < 0) throw std::invalid_argument("integration order must be non-negative");
  if (initial.size() != d) throw std::invalid_argument("initial value count must equal d");
  VectorXd cur = values;
  for (int k = d - 1; k >= 0; --k) {
    VectorXd up(cur.size() + 1);
    up(0) = initial(k);
    for (Index i = 0; i < cur.size(); ++i) up(i + 1) = up(i) + cur(i);
    cur = std::move(up);
  }
  return cur;
}

std::string to_string(const ArimaOrder& o) {
  return "(" + std::to_string(o.p) + "," + std::to_string(o.d) + "," + std::to_string(o.q) + ")";
}

ArimaModel arima_fit(const VectorXd& series, int p, int d, int q) {
  if (p < 0 || d < 0 || q < 0) throw std::invalid_argument("ARIMA orders must be non-negative");
  if (series.size() < 10 * (p + q + 1) || series.size() <= d + p + q + 1)
    throw Error("insufficient data for ARIMA" + to_string(ArimaOrder{p, d, q}));
  if (!series.allFinite()) throw std::invalid_argument("series contains non-finite values");

  const VectorXd y = difference(series, d).values;
  const Index n = y.size();
  const bool with_intercept = d == 0;

  ArimaModel model;
  model.p = p;
  model.d = d;
  model.q = q;
  model.ar_coeffs = VectorXd::Zero(p);
  model.ma_coeffs = VectorXd::Zero(q);

  // Stage 1: long autoregression for residual estimates.
  VectorXd stage1 = VectorXd::Zero(n);
  int long_order = 0;
  if (q > 0) {
    long_order = long_ar_order(n, p, q);
    const Index rows = n - long_order;
    const Index cols = long_order + (with_intercept ? 1 : 0);
    if (rows <= cols) throw Error("insufficient data for ARIMA" + to_string(model.order()));
    MatrixXd design(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const Index t = r + long_order;
      for (int i = 1; i <= long_order; ++i) design(r, i - 1) = y(t - i);
      if (with_intercept) design(r, cols - 1) = 1.0;
    }
    const auto ls = solve_ls(design, y.tail(rows));
    stage1.tail(rows) = ls.residuals;
  }

  // Stage 2: regress on own lags, lagged stage-1 residuals and the intercept.
  const Index start = std::max<Index>(p, q > 0 ? long_order + q : 0);
  const Index rows = n - start;
  const Index cols = p + q + (with_intercept ? 1 : 0);
  if (cols == 0) {
    model.residual_variance = y.squaredNorm() / static_cast<double>(n);
    return model;
  }
  if (rows <= cols) throw Error("insufficient data for ARIMA" + to_string(model.order()));
  MatrixXd design(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Index t = r + start;
    for (int i = 1; i <= p; ++i) design(r, i - 1) = y(t - i);
    for (int j = 1; j <= q; ++j) design(r, p + j - 1) = stage1(t - j);
    if (with_intercept) design(r, cols - 1) = 1.0;
  }
  const auto ls = solve_ls(design, y.tail(rows));
  model.ar_coeffs = ls.coeffs.head(p);
  model.ma_coeffs = ls.coeffs.segment(p, q);
  if (with_intercept) model.intercept = ls.coeffs(cols - 1);
  model.residual_variance = ls.residuals.squaredNorm() / static_cast<double>(rows - cols);
  if (!ma_invertible(model.ma_coeffs)) throw Error("non-invertible MA part");
  if (!std::isfinite(model.residual_variance)) throw Error("degenerate series");
  return model;
}

ArimaRollingForecaster::ArimaRollingForecaster(ArimaModel model, VectorXd series)
    : model_(std::move(model)), series_(std::move(series)) {
  if (series_.size() <= model_.d) throw Error("history too short for ARIMA forecast");
  levels_.push_back(series_);
  for (int k = 0; k < model_.d; ++k) levels_.push_back(difference(levels_.back(), 1).values);
  residuals_ = residual_recursion(model_, levels_.back());
}

Index ArimaRollingForecaster::min_anchor() const {
  return std::max<Index>(model_.p + model_.d, model_.d > 0 ? model_.d + 1 : 0);
}

VectorXd ArimaRollingForecaster::forecast(Index anchor, int n) const {
  if (n < 0) throw std::invalid_argument("horizon must be non-negative");
  if (anchor < min_anchor() || anchor > series_.size()) throw Error("history too short for ARIMA forecast");
  const int p = model_.p, q = model_.q, d = model_.d;
  const VectorXd& y = levels_.back();
  const Index last = anchor - d;  // y indices [0, last) are observed

  const int steps = n + 1;
  VectorXd future(steps);
  const auto y_at = [&](Index idx) { return idx < last ? y(idx) : future(idx - last); };
  for (int h = 0; h < steps; ++h) {
    const Index t = last + h;
    double pred = model_.intercept;
    for (int i = 1; i <= p; ++i) pred += model_.ar_coeffs(i - 1) * y_at(t - i);
    for (int j = 1; j <= q; ++j) {
      const Index idx = t - j;
      if (idx >= 0 && idx < last) pred += model_.ma_coeffs(j - 1) * residuals_(idx);
    }
    future(h) = pred;
  }
  if (d == 0) return future;
  // Level k seen from the suffix series[anchor - d ..] starts at levels_[k][anchor - d].
  VectorXd initial(d);
  for (int k = 0; k < d; ++k) initial(k) = levels_[static_cast<std::size_t>(k)](anchor - d);
  return integrate(future, initial, d).tail(steps);
}

VectorXd ArimaRollingForecaster::one_step_errors(Index start) const {
  if (start < min_anchor() || start >= series_.size()) throw Error("invalid one-step range");
  // The one-step error on the original scale equals the residual on the differenced scale.
  return residuals_.tail(series_.size() - start);
}

VectorXd arima_forecast(const ArimaModel& model, const VectorXd& history, int n) {
  if (history.size() < model.p + model.d || (model.d > 0 && history.size() <= model.d))
    throw Error("history too short for ARIMA forecast");
  if (model.d == 0 && history.size() == 0) return VectorXd::Constant(n + 1, model.intercept);
  return ArimaRollingForecaster(model, history).forecast(history.size(), n);
}

ArimaGrid ArimaGrid::ranges(int p_max, int d_max, int q_max) {
  ArimaGrid g;
  for (int p = 0; p <= p_max; ++p)
    for (int d = 0; d <= d_max; ++d)
      for (int q = 0; q <= q_max; ++q) g.orders.push_back({p, d, q});
  return g;
}

GridSearchResult arima_grid_search(const VectorXd& train, const VectorXd& valid, const ArimaGrid& grid,
                                   int jobs) {
  if (grid.orders.empty()) throw std::invalid_argument("empty ARIMA grid");
  if (valid.size() == 0) throw std::invalid_argument("empty validation series");
  VectorXd full(train.size() + valid.size());
  full << train, valid;

  const std::size_t count = grid.orders.size();
  std::vector<CandidateScore> scores(count);
  std::vector<std::optional<ArimaModel>> models(count);
  const auto evaluate = [&](std::size_t i) {
    const auto o = grid.orders[i];
    scores[i].order = o;
    try {
      auto model = arima_fit(train, o.p, o.d, o.q);
      ArimaRollingForecaster roll(model, full);
      if (train.size() < roll.min_anchor()) throw Error("history too short");
      const VectorXd err = roll.one_step_errors(train.size());
      const double value = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
      if (!std::isfinite(value)) throw Error("non-finite validation error");
      scores[i].valid_rmse = value;
      models[i] = std::move(model);
    } catch (const std::exception& e) {
      scores[i].failure = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) evaluate(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) evaluate(i);
      });
    for (auto& t : pool) t.join();
  }

  const auto better = [](const CandidateScore& a, const CandidateScore& b) {
    if (*a.valid_rmse != *b.valid_rmse) return *a.valid_rmse < *b.valid_rmse;
    const int ca = a.order.p + a.order.q, cb = b.order.p + b.order.q;
    if (ca != cb) return ca < cb;
    if (a.order.d != b.order.d) return a.order.d < b.order.d;
    return std::tie(a.order.p, a.order.d, a.order.q) < std::tie(b.order.p, b.order.d, b.order.q);
  };
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < count; ++i) {
    if (!scores[i].valid_rmse) continue;
    if (!best || better(scores[i], scores[*best])) best = i;
  }
  if (!best) throw Error("every ARIMA candidate failed to fit");
  return {*models[*best], *scores[*best].valid_rmse, std::move(scores)};
}

MatrixXd persistence_forecast(const MatrixXd& observations, Index n) {
  if (observations.cols() < 1) throw std::invalid_argument("persistence needs one observation");
  if (n < 0) throw std::invalid_argument("horizon must be non-negative");
  return observations.col(observations.cols() - 1).replicate(1, n + 1);
}

}  // namespace tpred
