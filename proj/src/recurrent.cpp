#include "tpred/recurrent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tpred/log.hpp"

namespace tpred {

namespace {

constexpr double kBlowUpFactor = 1e8;

struct Adam {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  GruModel<double> first, second;
  long long step = 0;

  explicit Adam(const GruModel<double>& shape)
      : first(GruModel<double>::zeros(shape.input_dim, shape.hidden_dim, shape.output_dim, shape.head)),
        second(first) {}

  void update(GruModel<double>& params, const GruModel<double>& grad, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const double rate = lr * std::sqrt(c2) / c1;
    auto apply = [&](auto& p, const auto& g, auto& m1, auto& m2) {
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
      p.array() -= rate * m1.array() / (m2.array().sqrt() + eps);
    };
    apply(params.input_reset, grad.input_reset, first.input_reset, second.input_reset);
    apply(params.recur_reset, grad.recur_reset, first.recur_reset, second.recur_reset);
    apply(params.bias_reset, grad.bias_reset, first.bias_reset, second.bias_reset);
    apply(params.input_update, grad.input_update, first.input_update, second.input_update);
    apply(params.recur_update, grad.recur_update, first.recur_update, second.recur_update);
    apply(params.bias_update, grad.bias_update, first.bias_update, second.bias_update);
    apply(params.input_cand, grad.input_cand, first.input_cand, second.input_cand);
    apply(params.recur_cand, grad.recur_cand, first.recur_cand, second.recur_cand);
    apply(params.bias_cand, grad.bias_cand, first.bias_cand, second.bias_cand);
    apply(params.out_weight, grad.out_weight, first.out_weight, second.out_weight);
    apply(params.out_bias, grad.out_bias, first.out_bias, second.out_bias);
  }
};

void check_dataset(const GruModel<double>& model, const SequenceDataset& data, const char* what) {
  if (data.size() < 1) throw std::invalid_argument(std::string(what) + ": no sequences");
  if (data.targets.cols() != data.size() || data.targets.rows() != model.output_dim)
    throw Error(std::string(what) + ": target shape does not match the model");
  const Index len = data.observations.front().cols();
  for (const auto& o : data.observations)
    if (o.rows() != model.input_dim || o.cols() != len || len < 1)
      throw Error(std::string(what) + ": sequence shape does not match the model");
}

void gather(const SequenceDataset& data, std::span<const std::size_t> idx, std::vector<MatrixXd>& steps,
            MatrixXd& targets) {
  const Index len = data.observations.front().cols();
  const Index rows = data.observations.front().rows();
  const Index batch = static_cast<Index>(idx.size());
  steps.resize(static_cast<std::size_t>(len));
  for (auto& s : steps) s.resize(rows, batch);
  targets.resize(data.targets.rows(), batch);
  for (Index b = 0; b < batch; ++b) {
    const auto& obs = data.observations[idx[static_cast<std::size_t>(b)]];
    for (Index t = 0; t < len; ++t) steps[static_cast<std::size_t>(t)].col(b) = obs.col(t);
    targets.col(b) = data.targets.col(static_cast<Index>(idx[static_cast<std::size_t>(b)]));
  }
}

double dataset_loss(const GruModel<double>& model, const SequenceDataset& data, LossKind loss) {
  std::vector<std::size_t> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), 0);
  std::vector<MatrixXd> steps;
  MatrixXd targets;
  double total = 0.0;
  constexpr std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < all.size(); begin += chunk) {
    const auto count = std::min(chunk, all.size() - begin);
    gather(data, std::span(all).subspan(begin, count), steps, targets);
    total += gru_loss<double>(model, steps, targets, loss) * static_cast<double>(count);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

SequenceDataset to_dataset(std::span<const WindowPair> pairs) {
  SequenceDataset data;
  if (pairs.empty()) return data;
  const Index out_dim = pairs.front().targets.size();
  data.targets.resize(out_dim, static_cast<Index>(pairs.size()));
  data.observations.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    data.observations.push_back(pairs[i].observations);
    data.targets.col(static_cast<Index>(i)) = pairs[i].targets.reshaped();
  }
  return data;
}

TrainResult gru_train(GruModel<double> init, const SequenceDataset& train, const TrainConfig& config,
                      LossKind loss, const SequenceDataset* valid) {
  if (config.epochs < 1 || !(config.learning_rate > 0) || config.batch_size < 1 || config.truncation < 0)
    throw std::invalid_argument("training config values must be positive");
  check_dataset(init, train, "training data");
  if (valid && valid->size() > 0) check_dataset(init, *valid, "validation data");
  else valid = nullptr;

  TrainResult result;
  result.model = std::move(init);
  GruModel<double>& model = result.model;
  Adam adam(model);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);

  std::vector<MatrixXd> steps;
  MatrixXd targets;
  GruModel<double> grad;
  double first_batch_loss = std::numeric_limits<double>::quiet_NaN();
  double best_valid = std::numeric_limits<double>::infinity();
  GruModel<double> best = model;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min(static_cast<std::size_t>(config.batch_size), order.size() - begin);
      gather(train, std::span(order).subspan(begin, count), steps, targets);
      const double value = gru_loss_gradient<double>(model, steps, targets, loss, grad, config.truncation);
      if (std::isnan(first_batch_loss)) first_batch_loss = value;
      if (!std::isfinite(value) || value > kBlowUpFactor * std::max(first_batch_loss, 1.0))
        throw Error("training diverged (loss " + std::to_string(value) +
                    "); try a smaller learning rate");
      adam.update(model, grad, config.learning_rate);
      epoch_loss += value * static_cast<double>(count);
    }
    epoch_loss /= static_cast<double>(train.size());
    result.loss_curve.push_back(epoch_loss);
    if (valid) {
      const double v = dataset_loss(model, *valid, loss);
      result.valid_curve.push_back(v);
      if (v < best_valid) {
        best_valid = v;
        best = model;
        since_best = 0;
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        break;
      }
    }
  }
  if (valid && config.keep_best) model = std::move(best);
  if (result.loss_curve.back() > result.loss_curve.front())
    log::warning("final training loss exceeds the first epoch's loss");
  return result;
}

TrainResult gru_train(GruModel<double> init, std::span<const WindowPair> pairs, const TrainConfig& config,
                      LossKind loss) {
  return gru_train(std::move(init), to_dataset(pairs), config, loss, nullptr);
}

MatrixXd gru_predict(const GruModel<double>& model, std::span<const MatrixXd> sequences, Index batch_size) {
  MatrixXd out(model.output_dim, static_cast<Index>(sequences.size()));
  if (sequences.empty()) return out;
  const Index len = sequences.front().cols();
  std::vector<MatrixXd> steps(static_cast<std::size_t>(len));
  for (std::size_t begin = 0; begin < sequences.size(); begin += static_cast<std::size_t>(batch_size)) {
    const auto count = std::min(static_cast<std::size_t>(batch_size), sequences.size() - begin);
    for (auto& s : steps) s.resize(model.input_dim, static_cast<Index>(count));
    for (std::size_t b = 0; b < count; ++b) {
      const auto& seq = sequences[begin + b];
      if (seq.rows() != model.input_dim || seq.cols() != len) throw Error("sequence shape mismatch");
      for (Index t = 0; t < len; ++t) steps[static_cast<std::size_t>(t)].col(static_cast<Index>(b)) = seq.col(t);
    }
    const auto tr = gru_forward<double>(model, steps);
    out.middleCols(static_cast<Index>(begin), static_cast<Index>(count)) = tr.output;
  }
  return out;
}

RecurrentForecaster train_recurrent_forecaster(const MatrixXd& train_masked, const MatrixXd* valid_masked,
                                               const ForecastShape& shape, Index hidden_dim,
                                               const TrainConfig& config, TrainResult* curves) {
  if (train_masked.rows() != shape.mask.count()) throw Error("training matrix does not match the mask");
  RecurrentForecaster f;
  f.shape = shape;
  f.normalizer = fit_normalizer<double>(train_masked);
  const auto train_windows = make_windows(f.normalizer.apply(train_masked), shape.m, shape.n);
  const auto train_data = to_dataset(train_windows);
  SequenceDataset valid_data;
  if (valid_masked && valid_masked->cols() >= shape.m + shape.n + 1)
    valid_data = to_dataset(make_windows(f.normalizer.apply(*valid_masked), shape.m, shape.n));

  const Index features = train_masked.rows();
  auto init = GruModel<double>::random(features, hidden_dim, features * (shape.n + 1), config.seed);
  auto result = gru_train(std::move(init), train_data, config, LossKind::squared_error,
                          valid_data.size() > 0 ? &valid_data : nullptr);
  f.model = std::move(result.model);
  if (curves) {
    curves->loss_curve = std::move(result.loss_curve);
    curves->valid_curve = std::move(result.valid_curve);
  }
  return f;
}

namespace {

MatrixXd denormalize_flat(const RecurrentForecaster& f, const MatrixXd& flat) {
  const Index features = f.normalizer.dim();
  MatrixXd out(flat.rows(), flat.cols());
  for (Index r = 0; r < flat.rows(); ++r) {
    const Index feat = r % features;
    out.row(r) = (flat.row(r).array() * f.normalizer.sd(feat) + f.normalizer.mean(feat)).max(0.0).matrix();
  }
  return out;
}

}  // namespace

MatrixXd gru_forecast(const RecurrentForecaster& f, const MatrixXd& observations, Index n,
                      const FeatureMask& mask) {
  if (!(mask == f.shape.mask) || n != f.shape.n || observations.cols() != f.shape.m ||
      observations.rows() != mask.count())
    throw Error("forecast request does not match the model's (m, n, mask) shape");
  const MatrixXd seq = f.normalizer.apply(observations);
  const auto out = gru_forward<double>(f.model, seq);
  const MatrixXd flat = out.output;
  return denormalize_flat(f, flat).reshaped(mask.count(), n + 1);
}

MatrixXd gru_forecast_batch(const RecurrentForecaster& f, const MatrixXd& masked_series,
                            std::span<const Index> anchors) {
  if (masked_series.rows() != f.shape.mask.count()) throw Error("series does not match the model's mask");
  const Index m = f.shape.m;
  std::vector<MatrixXd> seqs;
  seqs.reserve(anchors.size());
  for (Index a : anchors) {
    if (a < m || a > masked_series.cols()) throw Error("anchor lacks m observations");
    seqs.push_back(f.normalizer.apply(masked_series.middleCols(a - m, m)));
  }
  return denormalize_flat(f, gru_predict(f.model, seqs));
}

}  // namespace tpred
