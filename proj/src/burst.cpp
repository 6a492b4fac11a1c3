#include "tpred/burst.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tpred/csv.hpp"

namespace tpred {

namespace {

double ratio(Index num, Index den) { return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

void require_both_classes(std::span<const int> labels, const char* what) {
  const bool has_burst = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_quiet = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_burst || !has_quiet) throw Error(std::string(what));
}

}  // namespace

double Confusion::recall_burst() const { return ratio(true_burst, true_burst + missed_burst); }
double Confusion::recall_nonburst() const { return ratio(true_quiet, true_quiet + false_alarm); }
double Confusion::accuracy() const { return ratio(true_burst + true_quiet, total()); }

Confusion confusion(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("prediction/label length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) (predicted[i] ? c.true_burst : c.missed_burst) += 1;
    else (predicted[i] ? c.false_alarm : c.true_quiet) += 1;
  }
  return c;
}

SequenceDataset burst_dataset(const MatrixXd& normalized, std::span<const int> labels, Index m) {
  if (static_cast<Index>(labels.size()) != normalized.cols())
    throw std::invalid_argument("label count must equal interval count");
  if (m < 1) throw std::invalid_argument("m must be positive");
  SequenceDataset data;
  const Index count = normalized.cols() - m;
  if (count < 1) throw Error("insufficient history");
  data.targets.resize(1, count);
  for (Index t = m; t < normalized.cols(); ++t) {
    data.observations.push_back(normalized.middleCols(t - m, m));
    data.targets(0, t - m) = labels[static_cast<std::size_t>(t)];
  }
  return data;
}

BurstPredictor train_burst_predictor(const MatrixXd& masked_train, std::span<const int> train_labels,
                                     const BurstTrainOptions& options, const MatrixXd* masked_valid,
                                     std::span<const int> valid_labels) {
  if (masked_train.rows() != options.mask.count()) throw Error("training matrix does not match the mask");
  if (static_cast<Index>(train_labels.size()) <= options.m) throw Error("insufficient history");
  require_both_classes(train_labels.subspan(static_cast<std::size_t>(options.m)), "degenerate labels");

  BurstPredictor p;
  p.m = options.m;
  p.mask = options.mask;
  p.normalizer = fit_normalizer<double>(masked_train);
  const auto train = burst_dataset(p.normalizer.apply(masked_train), train_labels, options.m);
  SequenceDataset valid;
  if (masked_valid && masked_valid->cols() > options.m)
    valid = burst_dataset(p.normalizer.apply(*masked_valid), valid_labels, options.m);

  auto init = GruModel<double>::random(masked_train.rows(), options.hidden_dim, 1, options.train.seed,
                                       OutputHead::sigmoid);
  p.model = gru_train(std::move(init), train, options.train, options.loss, valid.size() > 0 ? &valid : nullptr)
                .model;
  return p;
}

VectorXd burst_probabilities(const BurstPredictor& predictor, const MatrixXd& masked_series,
                             std::span<const Index> anchors) {
  if (masked_series.rows() != predictor.mask.count()) throw Error("series does not match the predictor's mask");
  std::vector<MatrixXd> seqs;
  seqs.reserve(anchors.size());
  for (Index a : anchors) {
    if (a < predictor.m || a > masked_series.cols()) throw Error("anchor lacks m observations");
    seqs.push_back(predictor.normalizer.apply(masked_series.middleCols(a - predictor.m, predictor.m)));
  }
  return gru_predict(predictor.model, seqs).row(0).transpose();
}

std::vector<int> persistence_burst_baseline(std::span<const int> labels) {
  if (labels.size() < 2) throw std::invalid_argument("baseline needs at least two labels");
  std::vector<int> out(labels.size(), 0);
  std::copy(labels.begin(), labels.end() - 1, out.begin() + 1);
  return out;
}

std::vector<BurstSweepPoint> sweep_thresholds(std::span<const double> probabilities, std::span<const int> labels,
                                              std::span<const double> thresholds) {
  if (probabilities.size() != labels.size()) throw std::invalid_argument("probability/label length mismatch");
  require_both_classes(labels, "sweep needs both burst and non-burst labels");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("thresholds must be strictly increasing");

  // Sorted probabilities per class turn each threshold into two binary searches.
  std::vector<double> burst, quiet;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? burst : quiet).push_back(probabilities[i]);
  std::sort(burst.begin(), burst.end());
  std::sort(quiet.begin(), quiet.end());
  const auto at_least = [](const std::vector<double>& v, double th) {
    return static_cast<Index>(v.end() - std::lower_bound(v.begin(), v.end(), th));
  };

  std::vector<BurstSweepPoint> out;
  out.reserve(thresholds.size());
  for (double th : thresholds) {
    Confusion c;
    c.true_burst = at_least(burst, th);
    c.missed_burst = static_cast<Index>(burst.size()) - c.true_burst;
    c.false_alarm = at_least(quiet, th);
    c.true_quiet = static_cast<Index>(quiet.size()) - c.false_alarm;
    out.push_back({th, c.recall_burst(), c.recall_nonburst(), c.accuracy()});
  }
  return out;
}

std::vector<double> log_spaced_thresholds(int count, double lo, double hi) {
  if (count < 2 || !(lo > 0) || !(hi > lo)) throw std::invalid_argument("bad threshold grid");
  std::vector<double> out(static_cast<std::size_t>(count));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

Crossover find_crossover(std::span<const BurstSweepPoint> sweep) {
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const double gap = sweep[i].recall_burst - sweep[i].recall_nonburst;
    if (gap == 0.0) return {sweep[i].threshold, sweep[i].recall_burst};
    if (i + 1 == sweep.size()) break;
    const double next = sweep[i + 1].recall_burst - sweep[i + 1].recall_nonburst;
    if ((gap > 0) != (next > 0) && next != 0.0) {
      const double frac = gap / (gap - next);
      const auto& a = sweep[i];
      const auto& b = sweep[i + 1];
      return {a.threshold + frac * (b.threshold - a.threshold),
              a.recall_burst + frac * (b.recall_burst - a.recall_burst)};
    }
  }
  throw Error("no crossover in grid");
}

void write_sweep_csv(std::ostream& out, std::span<const BurstSweepPoint> sweep) {
  csv::Writer w(out);
  w.header({"threshold", "recall_burst", "recall_nonburst", "accuracy"});
  for (const auto& p : sweep) {
    w.cell(p.threshold).cell(p.recall_burst).cell(p.recall_nonburst).cell(p.accuracy);
    w.end_row();
  }
}

}  // namespace tpred
