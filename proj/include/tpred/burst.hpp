#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "tpred/recurrent.hpp"

namespace tpred {

struct BurstSweepPoint {
  double threshold = 0.0;
  double recall_burst = 0.0;
  double recall_nonburst = 0.0;
  double accuracy = 0.0;
};

struct Confusion {
  Index true_burst = 0;    // burst predicted as burst
  Index missed_burst = 0;  // burst predicted as non-burst
  Index false_alarm = 0;   // non-burst predicted as burst
  Index true_quiet = 0;    // non-burst predicted as non-burst

  Index total() const { return true_burst + missed_burst + false_alarm + true_quiet; }
  double recall_burst() const;
  double recall_nonburst() const;
  double accuracy() const;
};

Confusion confusion(std::span<const int> predicted, std::span<const int> labels);

/// Next-interval burst probability from the last m masked feature vectors.
struct BurstPredictor {
  GruModel<double> model;  // sigmoid head, one output
  Normalizer<double> normalizer;
  Index m = 1;
  FeatureMask mask = FeatureMask::named(3);
};

struct BurstTrainOptions {
  Index m = 10;
  FeatureMask mask = FeatureMask::named(3);
  Index hidden_dim = 16;
  TrainConfig train;
  LossKind loss = LossKind::squared_error;
};

/// Pairs each window of m masked intervals ending before t with labels[t].
SequenceDataset burst_dataset(const MatrixXd& normalized, std::span<const int> labels, Index m);

BurstPredictor train_burst_predictor(const MatrixXd& masked_train, std::span<const int> train_labels,
                                     const BurstTrainOptions& options, const MatrixXd* masked_valid = nullptr,
                                     std::span<const int> valid_labels = {});

/// Probability of a burst at each anchor (interval index into `masked_series`).
VectorXd burst_probabilities(const BurstPredictor& predictor, const MatrixXd& masked_series,
                             std::span<const Index> anchors);

/// prediction[k] = labels[k - 1]; the first interval is predicted non-burst.
std::vector<int> persistence_burst_baseline(std::span<const int> labels);

/// Predict burst iff probability >= threshold. Thresholds must be strictly increasing.
std::vector<BurstSweepPoint> sweep_thresholds(std::span<const double> probabilities, std::span<const int> labels,
                                              std::span<const double> thresholds);

/// `count` thresholds log-spaced over [lo, hi].
std::vector<double> log_spaced_thresholds(int count = 200, double lo = 1e-3, double hi = 1.0);

struct Crossover {
  double threshold = 0.0;
  double recall = 0.0;
};

/// Linear interpolation at the first sign change of recall_burst - recall_nonburst.
Crossover find_crossover(std::span<const BurstSweepPoint> sweep);

void write_sweep_csv(std::ostream& out, std::span<const BurstSweepPoint> sweep);

}  // namespace tpred
