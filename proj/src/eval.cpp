#include "tpred/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <thread>

#include "tpred/csv.hpp"
#include "tpred/log.hpp"

namespace tpred {

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("rmse: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - actual[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

double relative_gain_pct(double rmse_value, double rmse_persistence) {
  if (!(rmse_persistence > 0)) return 0.0;
  return 100.0 * (1.0 - rmse_value / rmse_persistence);
}

std::vector<double> default_bucket_edges() {
  std::vector<double> edges;
  for (int i = 0; i <= 10; ++i) edges.push_back(0.2 * i);
  edges.push_back(std::numeric_limits<double>::infinity());
  return edges;
}

double window_sd(const VectorXd& target, Index anchor, Index m) {
  if (m < 1 || anchor < m || anchor > target.size()) throw std::invalid_argument("window out of range");
  if (m == 1) return 0.0;
  const auto w = target.segment(anchor - m, m);
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().sum() / static_cast<double>(m - 1));
}

namespace {

// (n + 1) x anchors matrix of actual target values.
MatrixXd actuals(const VectorXd& target, std::span<const Index> anchors, Index n) {
  MatrixXd out(n + 1, static_cast<Index>(anchors.size()));
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    if (anchors[j] + n >= target.size()) throw Error("anchor leaves no room for the horizon");
    out.col(static_cast<Index>(j)) = target.segment(anchors[j], n + 1);
  }
  return out;
}

std::size_t bucket_of(double fraction, std::span<const double> edges) {
  for (std::size_t b = 0; b + 1 < edges.size(); ++b)
    if (fraction >= edges[b] && fraction < edges[b + 1]) return b;
  throw Error("SD fraction outside the bucket edges");
}

template <class F>
void parallel_for(std::size_t count, int jobs, F&& body) {
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(count);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Shared view of one split series for test-partition scoring.
struct EvalContext {
  VectorXd target;  // f1 over the whole series
  MatrixXd features;
  MatrixXd train_features, valid_features;
  VectorXd train_target, valid_target;
  Index test_start = 0;
  double long_term_sd = 0.0;
  double tau = 0.0;

  EvalContext(const LabeledSeries& series, double train_frac, double valid_frac) {
    const auto split = split_series(series, train_frac, valid_frac);
    features = series.features;
    target = series.features.row(kUplinkPackets).transpose();
    train_features = split.train.features;
    valid_features = split.valid.features;
    train_target = split.train.features.row(kUplinkPackets).transpose();
    valid_target = split.valid.features.row(kUplinkPackets).transpose();
    test_start = split.train.size() + split.valid.size();
    tau = series.tau;
    if (train_target.size() >= 2) {
      const double mean = train_target.mean();
      long_term_sd = std::sqrt((train_target.array() - mean).square().sum() /
                               static_cast<double>(train_target.size() - 1));
    }
  }

  // Anchors whose observation window and horizon both stay inside the test partition.
  std::vector<Index> test_anchors(Index n, Index history) const {
    std::vector<Index> a;
    for (Index t = test_start + history; t + n < target.size(); ++t) a.push_back(t);
    if (a.empty()) throw Error("test partition shorter than the horizon");
    return a;
  }
};

AnchorPredictor persistence_predictor(const VectorXd& target, Index n) {
  return [&target, n](std::span<const Index> anchors) {
    MatrixXd out(n + 1, static_cast<Index>(anchors.size()));
    for (std::size_t j = 0; j < anchors.size(); ++j)
      out.col(static_cast<Index>(j)).setConstant(target(anchors[j] - 1));
    return out;
  };
}

struct ArimaPredictor {
  std::shared_ptr<ArimaRollingForecaster> roll;
  ArimaOrder order;
};

ArimaPredictor fit_arima(const EvalContext& ctx, const ArimaGrid& grid, int jobs) {
  const auto result = arima_grid_search(ctx.train_target, ctx.valid_target, grid, jobs);
  log::info("ARIMA" + to_string(result.model.order()) + " selected");
  return {std::make_shared<ArimaRollingForecaster>(result.model, ctx.target), result.model.order()};
}

AnchorPredictor arima_predictor(const ArimaPredictor& arima, Index n) {
  return [roll = arima.roll, n](std::span<const Index> anchors) {
    MatrixXd out(n + 1, static_cast<Index>(anchors.size()));
    for (std::size_t j = 0; j < anchors.size(); ++j)
      out.col(static_cast<Index>(j)) = roll->forecast(anchors[j], static_cast<int>(n)).cwiseMax(0.0);
    return out;
  };
}

// Returns the f1 rows of a flattened (F * (n + 1)) x A forecast.
MatrixXd f1_rows(const MatrixXd& flat, Index features, Index n) {
  MatrixXd out(n + 1, flat.cols());
  for (Index s = 0; s <= n; ++s) out.row(s) = flat.row(s * features);
  return out;
}

std::shared_ptr<RecurrentForecaster> fit_recurrent(const EvalContext& ctx, const FeatureMask& mask, Index m,
                                                   Index n, Index hidden, const TrainConfig& train) {
  if (!mask.test(kUplinkPackets)) throw std::invalid_argument("feature set must include f1 to score f1");
  ForecastShape shape{m, n, mask, ctx.tau};
  const MatrixXd tr = apply_mask(ctx.train_features, mask);
  const MatrixXd va = apply_mask(ctx.valid_features, mask);
  return std::make_shared<RecurrentForecaster>(train_recurrent_forecaster(tr, &va, shape, hidden, train));
}

AnchorPredictor recurrent_predictor(std::shared_ptr<RecurrentForecaster> f, MatrixXd masked) {
  return [f, masked = std::move(masked)](std::span<const Index> anchors) {
    return f1_rows(gru_forecast_batch(*f, masked, anchors), f->shape.mask.count(), f->shape.n);
  };
}

}  // namespace

std::vector<BucketRow> sd_bucket_report(const VectorXd& target, std::span<const Index> anchors, Index m, Index n,
                                        double long_term_sd, std::span<const NamedPredictor> predictors,
                                        std::span<const double> edges) {
  if (!(long_term_sd > 0) || !std::isfinite(long_term_sd)) throw Error("degenerate training data");
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
    throw std::invalid_argument("bucket edges must be sorted with at least two entries");
  if (anchors.empty()) throw std::invalid_argument("no test windows");
  std::vector<std::size_t> bucket(anchors.size());
  for (std::size_t j = 0; j < anchors.size(); ++j)
    bucket[j] = bucket_of(window_sd(target, anchors[j], m) / long_term_sd, edges);
  const MatrixXd actual = actuals(target, anchors, n);

  std::vector<BucketRow> rows;
  for (const auto& p : predictors) {
    const MatrixXd pred = p.predict(anchors);
    if (pred.rows() != n + 1 || pred.cols() != actual.cols()) throw Error("predictor returned the wrong shape");
    std::vector<double> sse(edges.size() - 1, 0.0);
    std::vector<Index> count(edges.size() - 1, 0);
    for (std::size_t j = 0; j < anchors.size(); ++j) {
      sse[bucket[j]] += (pred.col(static_cast<Index>(j)) - actual.col(static_cast<Index>(j))).squaredNorm();
      ++count[bucket[j]];
    }
    for (std::size_t b = 0; b < sse.size(); ++b) {
      if (count[b] == 0) continue;
      rows.push_back({p.scheme, edges[b], edges[b + 1],
                      std::sqrt(sse[b] / static_cast<double>(count[b] * (n + 1))), count[b], sse[b]});
    }
  }
  return rows;
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::persistence: return "persistence";
    case Scheme::arima: return "arima";
    case Scheme::recurrent: return "recurrent";
  }
  return "?";
}

Scheme parse_scheme(std::string_view text) {
  if (text == "persistence") return Scheme::persistence;
  if (text == "arima") return Scheme::arima;
  if (text == "recurrent" || text == "rnn") return Scheme::recurrent;
  throw std::invalid_argument("unknown scheme '" + std::string(text) + "'");
}

SweepResult observation_horizon_sweep(const LabeledSeries& series, const SweepConfig& config) {
  if (config.m_values.empty() || config.n_values.empty() || config.schemes.empty())
    throw std::invalid_argument("sweep needs m values, n values and schemes");
  for (Index m : config.m_values)
    if (m < 1) throw std::invalid_argument("m must be positive");
  for (Index n : config.n_values)
    if (n < 0) throw std::invalid_argument("n must be non-negative");

  EvalContext ctx(series, config.train_frac, config.valid_frac);
  const Index max_m = *std::max_element(config.m_values.begin(), config.m_values.end());
  const auto has = [&](Scheme s) {
    return std::find(config.schemes.begin(), config.schemes.end(), s) != config.schemes.end();
  };
  for (Index m : config.m_values)
    for (Index n : config.n_values) {
      if (ctx.train_features.cols() < m + n + 1 || ctx.target.size() - ctx.test_start < max_m + n + 1)
        throw Error("insufficient data for (m=" + std::to_string(m) + ", n=" + std::to_string(n) + ")");
    }

  std::optional<ArimaPredictor> arima;
  if (has(Scheme::arima)) arima = fit_arima(ctx, config.arima_grid, config.jobs);

  // Persistence RMSE per n; it is the reference for relative gains.
  std::map<Index, double> base;
  std::map<Index, std::vector<Index>> anchors;
  for (Index n : config.n_values) {
    anchors[n] = ctx.test_anchors(n, max_m);
    base[n] = rmse(persistence_predictor(ctx.target, n)(anchors[n]), actuals(ctx.target, anchors[n], n));
  }

  struct Cell {
    Scheme scheme;
    Index m, n;
  };
  std::vector<Cell> cells;
  for (Scheme s : config.schemes)
    for (Index m : config.m_values)
      for (Index n : config.n_values) cells.push_back({s, m, n});

  const MatrixXd masked = has(Scheme::recurrent) ? apply_mask(ctx.features, config.mask) : MatrixXd();
  SweepResult result;
  result.cells.resize(cells.size());
  parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
    const auto& c = cells[i];
    const auto& a = anchors.at(c.n);
    double value = 0.0;
    switch (c.scheme) {
      case Scheme::persistence: value = base.at(c.n); break;
      case Scheme::arima: value = rmse(arima_predictor(*arima, c.n)(a), actuals(ctx.target, a, c.n)); break;
      case Scheme::recurrent: {
        auto f = fit_recurrent(ctx, config.mask, c.m, c.n, config.hidden_dim, config.train);
        value = rmse(recurrent_predictor(f, masked)(a), actuals(ctx.target, a, c.n));
        log::info("recurrent m=" + std::to_string(c.m) + " n=" + std::to_string(c.n) + " rmse=" + csv::format(value));
        break;
      }
    }
    result.cells[i] = {to_string(c.scheme), ctx.tau, c.m, c.n,
                       c.scheme == Scheme::recurrent ? config.mask.label() : std::string("FS-3"),
                       value, relative_gain_pct(value, base.at(c.n)), {}};
  });

  if (has(Scheme::recurrent)) {
    std::vector<Index> ms = config.m_values;
    std::sort(ms.begin(), ms.end());
    for (Index n : config.n_values) {
      SweepThreshold th{n, std::nullopt};
      for (Index m : ms) {
        const auto it = std::find_if(result.cells.begin(), result.cells.end(), [&](const EvalReport& r) {
          return r.scheme == "recurrent" && r.m == m && r.n == n;
        });
        if (it->rmse < base.at(n)) {
          th.m_star = m;
          break;
        }
      }
      result.thresholds.push_back(th);
    }
  }
  return result;
}

BucketExperiment sd_bucket_experiment(const LabeledSeries& series, const BucketExperimentConfig& config) {
  if (config.m < 1 || config.n < 0) throw std::invalid_argument("need m >= 1 and n >= 0");
  EvalContext ctx(series, config.train_frac, config.valid_frac);
  if (!(ctx.long_term_sd > 0)) throw Error("degenerate training data");
  const auto anchors = ctx.test_anchors(config.n, config.m);
  const MatrixXd actual = actuals(ctx.target, anchors, config.n);

  std::vector<NamedPredictor> predictors;
  std::vector<std::string> masks_used;
  predictors.push_back({"persistence", persistence_predictor(ctx.target, config.n)});
  masks_used.push_back("FS-3");
  if (config.include_arima) {
    predictors.push_back({"arima", arima_predictor(fit_arima(ctx, config.arima_grid, config.jobs), config.n)});
    masks_used.push_back("FS-3");
  }
  std::vector<std::shared_ptr<RecurrentForecaster>> models(config.masks.size());
  parallel_for(config.masks.size(), config.jobs, [&](std::size_t i) {
    models[i] = fit_recurrent(ctx, config.masks[i], config.m, config.n, config.hidden_dim, config.train);
  });
  for (std::size_t i = 0; i < config.masks.size(); ++i) {
    predictors.push_back({"recurrent:" + config.masks[i].label(),
                          recurrent_predictor(models[i], apply_mask(ctx.features, config.masks[i]))});
    masks_used.push_back(config.masks[i].label());
  }

  BucketExperiment out;
  out.long_term_sd = ctx.long_term_sd;
  double base = 0.0;
  for (std::size_t i = 0; i < predictors.size(); ++i) {
    const double value = rmse(predictors[i].predict(anchors), actual);
    if (i == 0) base = value;
    out.reports.push_back({predictors[i].scheme, ctx.tau, config.m, config.n, masks_used[i], value,
                           relative_gain_pct(value, base), {}});
  }
  out.buckets = sd_bucket_report(ctx.target, anchors, config.m, config.n, ctx.long_term_sd, predictors, config.edges);
  for (auto& r : out.reports)
    for (const auto& b : out.buckets)
      if (b.scheme == r.scheme) r.buckets.push_back(b);
  return out;
}

void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports) {
  csv::Writer w(out);
  w.header({"scheme", "tau", "m", "n", "feature_set", "rmse", "relative_gain_pct"});
  for (const auto& r : reports) {
    w.cell(std::string_view(r.scheme)).cell(r.tau).cell(r.m).cell(r.n).cell(std::string_view(r.feature_set));
    w.cell(r.rmse).cell(r.relative_gain_vs_persistence).end_row();
  }
}

void write_bucket_csv(std::ostream& out, std::span<const BucketRow> rows) {
  csv::Writer w(out);
  w.header({"scheme", "sd_fraction_lo", "sd_fraction_hi", "rmse"});
  for (const auto& r : rows)
    w.cell(std::string_view(r.scheme)).cell(r.sd_fraction_lo).cell(r.sd_fraction_hi).cell(r.rmse).end_row();
}

void write_threshold_csv(std::ostream& out, std::span<const SweepThreshold> thresholds) {
  csv::Writer w(out);
  w.header({"n", "m_star"});
  for (const auto& t : thresholds) {
    w.cell(t.n);
    if (t.m_star) w.cell(*t.m_star);
    else w.cell("none");
    w.end_row();
  }
}

}  // namespace tpred
