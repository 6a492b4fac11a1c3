#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tpred/gru.hpp"
#include "tpred/ingest.hpp"
#include "tpred/normalizer.hpp"

namespace tpred {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-3;
  int truncation = 0;  // BPTT steps; 0 uses the full window
  int batch_size = 32;
  std::uint64_t seed = 1;
  /// Keep the parameters with the lowest validation loss when validation data is given.
  bool keep_best = true;
  /// Stop after this many epochs without validation improvement (0 disables).
  int patience = 0;
};

/// Fixed-length sequences with flat targets. observations[i] is input_dim x m.
struct SequenceDataset {
  std::vector<MatrixXd> observations;
  MatrixXd targets;  // output_dim x N

  Index size() const { return static_cast<Index>(observations.size()); }
};

/// Targets are the column-major flattening of each pair's target matrix.
SequenceDataset to_dataset(std::span<const WindowPair> pairs);

struct TrainResult {
  GruModel<double> model;
  std::vector<double> loss_curve;   // mean training loss per epoch
  std::vector<double> valid_curve;  // per epoch, when validation data is given
};

/// Mini-batch Adam over truncated BPTT. Throws Error on divergence.
TrainResult gru_train(GruModel<double> init, const SequenceDataset& train, const TrainConfig& config,
                      LossKind loss = LossKind::squared_error, const SequenceDataset* valid = nullptr);
TrainResult gru_train(GruModel<double> init, std::span<const WindowPair> pairs, const TrainConfig& config,
                      LossKind loss = LossKind::squared_error);

/// Batched read-out for many sequences; returns output_dim x N.
MatrixXd gru_predict(const GruModel<double>& model, std::span<const MatrixXd> sequences,
                     Index batch_size = 256);

/// Shape contract a trained forecaster was built for.
struct ForecastShape {
  Index m = 1;
  Index n = 0;
  FeatureMask mask = FeatureMask::named(3);
  double tau = 10.0;
};

/// Direct multi-output forecaster: one read-out emits all (n + 1) x |mask| values.
struct RecurrentForecaster {
  GruModel<double> model;
  Normalizer<double> normalizer;
  ForecastShape shape;
};

/// Fits the normalizer on `train_masked` (F x T, raw scale), builds windows and trains.
RecurrentForecaster train_recurrent_forecaster(const MatrixXd& train_masked, const MatrixXd* valid_masked,
                                               const ForecastShape& shape, Index hidden_dim,
                                               const TrainConfig& config, TrainResult* curves = nullptr);

/// Forecast for one observation window (F x m raw) as F x (n + 1), clamped at zero.
MatrixXd gru_forecast(const RecurrentForecaster& f, const MatrixXd& observations, Index n,
                      const FeatureMask& mask);

/// Forecasts for many anchors of a masked raw series; returns (F * (n + 1)) x anchors.
MatrixXd gru_forecast_batch(const RecurrentForecaster& f, const MatrixXd& masked_series,
                            std::span<const Index> anchors);

}  // namespace tpred
