#include "tpred/classify.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "tpred/csv.hpp"

namespace tpred {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int majority_label(std::span<const Index> counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, std::span<const int> y, int num_classes, const TreeLimits& limits,
              int features_per_split, std::mt19937_64* rng)
      : x_(x), y_(y), classes_(num_classes), limits_(limits), per_split_(features_per_split), rng_(rng) {}

  DecisionTree build(std::vector<Index> idx) {
    tree_.num_features = x_.rows();
    tree_.num_classes = classes_;
    tree_.limits = limits_;
    grow(idx, 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
  };

  std::vector<Index> histogram(const std::vector<Index>& idx) const {
    std::vector<Index> counts(static_cast<std::size_t>(classes_), 0);
    for (Index i : idx) ++counts[static_cast<std::size_t>(y_[static_cast<std::size_t>(i)])];
    return counts;
  }

  // Best split on one feature, or feature == -1 when none beats `best.impurity`.
  void scan_feature(int f, std::vector<Index>& idx, Split& best) const {
    std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
      const double va = x_(f, a), vb = x_(f, b);
      return va < vb || (va == vb && a < b);
    });
    const Index n = static_cast<Index>(idx.size());
    std::vector<Index> left(static_cast<std::size_t>(classes_), 0);
    std::vector<Index> right = histogram(idx);
    for (Index k = 0; k + 1 < n; ++k) {
      const auto c = static_cast<std::size_t>(y_[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]);
      ++left[c];
      --right[c];
      const double lo = x_(f, idx[static_cast<std::size_t>(k)]);
      const double hi = x_(f, idx[static_cast<std::size_t>(k + 1)]);
      if (!(lo < hi)) continue;
      const Index nl = k + 1, nr = n - nl;
      if (nl < limits_.min_samples_leaf || nr < limits_.min_samples_leaf) continue;
      const double weighted =
          (static_cast<double>(nl) * gini(left) + static_cast<double>(nr) * gini(right)) / static_cast<double>(n);
      if (weighted < best.impurity) {
        double mid = lo + (hi - lo) / 2.0;
        if (!(mid < hi)) mid = lo;
        best = {f, mid, weighted};
      }
    }
  }

  int grow(std::vector<Index>& idx, int depth) {
    const auto counts = histogram(idx);
    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes.back().label = majority_label(counts);

    const double parent = gini(counts);
    const Index n = static_cast<Index>(idx.size());
    if (parent == 0.0 || depth >= limits_.max_depth || n < limits_.min_samples_split ||
        n < 2 * static_cast<Index>(limits_.min_samples_leaf))
      return node_id;

    // Strict decrease required; tiny slack absorbs rounding in the weighted sum.
    Split best{-1, 0.0, parent - 1e-12};
    const int features = static_cast<int>(x_.rows());
    if (per_split_ <= 0 || per_split_ >= features || !rng_) {
      for (int f = 0; f < features; ++f) scan_feature(f, idx, best);
    } else {
      std::vector<int> order(static_cast<std::size_t>(features));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), *rng_);
      std::vector<int> first(order.begin(), order.begin() + per_split_);
      std::sort(first.begin(), first.end());
      for (int f : first) scan_feature(f, idx, best);
      // Keep drawing features until some split helps.
      for (std::size_t k = static_cast<std::size_t>(per_split_); best.feature < 0 && k < order.size(); ++k)
        scan_feature(order[k], idx, best);
    }
    if (best.feature < 0) return node_id;

    std::vector<Index> left, right;
    for (Index i : idx) (x_(best.feature, i) <= best.threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(node_id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }

  const MatrixXd& x_;
  std::span<const int> y_;
  int classes_;
  TreeLimits limits_;
  int per_split_;
  std::mt19937_64* rng_;
  DecisionTree tree_;
};

void check_samples(const MatrixXd& samples, std::span<const int> labels, int num_classes) {
  if (samples.cols() == 0) throw std::invalid_argument("no training samples");
  if (static_cast<Index>(labels.size()) != samples.cols())
    throw std::invalid_argument("label count must equal sample count");
  if (num_classes < 1) throw std::invalid_argument("need at least one class");
  for (int c : labels)
    if (c < 0 || c >= num_classes) throw std::invalid_argument("label out of range");
}

}  // namespace

double gini(std::span<const Index> class_counts) {
  const double total = static_cast<double>(std::accumulate(class_counts.begin(), class_counts.end(), Index{0}));
  if (total == 0) return 0.0;
  double sum = 0.0;
  for (Index c : class_counts) {
    const double p = static_cast<double>(c) / total;
    sum += p * p;
  }
  return 1.0 - sum;
}

int majority_vote(std::span<const int> votes, int num_classes) {
  if (votes.empty()) throw std::invalid_argument("no votes");
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (int v : votes) ++counts.at(static_cast<std::size_t>(v));
  return majority_label(counts);
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  int deepest = 0;
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    const auto& n = nodes[static_cast<std::size_t>(id)];
    deepest = std::max(deepest, d);
    if (!n.is_leaf()) {
      stack.push_back({n.left, d + 1});
      stack.push_back({n.right, d + 1});
    }
  }
  return deepest;
}

Index DecisionTree::leaf_count() const {
  return std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); });
}

DecisionTree detail::tree_fit_randomized(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                                         const TreeLimits& limits, int features_per_split, std::mt19937_64* rng) {
  check_samples(samples, labels, num_classes);
  std::vector<Index> idx(static_cast<std::size_t>(samples.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  return TreeBuilder(samples, labels, num_classes, limits, features_per_split, rng).build(std::move(idx));
}

DecisionTree tree_fit(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                      const TreeLimits& limits) {
  return detail::tree_fit_randomized(samples, labels, num_classes, limits, 0, nullptr);
}

int tree_predict(const DecisionTree& tree, const Eigen::Ref<const VectorXd>& x) {
  if (x.size() != tree.num_features) throw std::invalid_argument("feature dimension mismatch");
  int id = 0;
  while (true) {
    const auto& n = tree.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) return n.label;
    id = x(n.feature) <= n.threshold ? n.left : n.right;
  }
}

RandomForest forest_fit(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                        const ForestConfig& config, int jobs) {
  if (config.num_trees < 1) throw std::invalid_argument("forest needs at least one tree");
  check_samples(samples, labels, num_classes);
  RandomForest forest;
  forest.config = config;
  forest.num_features = samples.rows();
  forest.num_classes = num_classes;
  forest.features_per_split =
      config.features_per_split > 0
          ? std::min<int>(config.features_per_split, static_cast<int>(samples.rows()))
          : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(samples.rows()))));
  const auto k = static_cast<std::size_t>(config.num_trees);
  forest.trees.resize(k);
  forest.tree_seeds.resize(k);
  for (std::size_t i = 0; i < k; ++i) forest.tree_seeds[i] = splitmix64(config.seed + i);

  const Index n = samples.cols();
  const auto fit_one = [&](std::size_t i) {
    std::mt19937_64 rng(forest.tree_seeds[i]);
    if (!config.bootstrap) {
      forest.trees[i] = detail::tree_fit_randomized(samples, labels, num_classes, config.limits,
                                                    forest.features_per_split, &rng);
      return;
    }
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> draw(static_cast<std::size_t>(n));
    for (auto& d : draw) d = pick(rng);
    MatrixXd boot = samples(Eigen::all, draw);
    std::vector<int> boot_labels(draw.size());
    for (std::size_t j = 0; j < draw.size(); ++j) boot_labels[j] = labels[static_cast<std::size_t>(draw[j])];
    forest.trees[i] =
        detail::tree_fit_randomized(boot, boot_labels, num_classes, config.limits, forest.features_per_split, &rng);
  };

  const int workers = std::max(1, std::min<int>(jobs, config.num_trees));
  if (workers == 1) {
    for (std::size_t i = 0; i < k; ++i) fit_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < k; i = next++) fit_one(i);
      });
    for (auto& t : pool) t.join();
  }
  return forest;
}

int forest_predict(const RandomForest& forest, const Eigen::Ref<const VectorXd>& x) {
  if (x.size() != forest.num_features) throw std::invalid_argument("feature dimension mismatch");
  std::vector<int> votes;
  votes.reserve(forest.trees.size());
  for (const auto& t : forest.trees) votes.push_back(tree_predict(t, x));
  return majority_vote(votes, forest.num_classes);
}

std::vector<int> forest_predict_all(const RandomForest& forest, const MatrixXd& samples) {
  std::vector<int> out(static_cast<std::size_t>(samples.cols()));
  for (Index i = 0; i < samples.cols(); ++i) out[static_cast<std::size_t>(i)] = forest_predict(forest, samples.col(i));
  return out;
}

void ClassWindows::append(const ClassWindows& other) {
  windows.insert(windows.end(), other.windows.begin(), other.windows.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

ClassWindows class_windows(const MatrixXd& masked, std::span<const int> labels, Index m) {
  if (static_cast<Index>(labels.size()) != masked.cols())
    throw std::invalid_argument("label count must equal interval count");
  if (m < 1) throw std::invalid_argument("m must be positive");
  ClassWindows out;
  for (Index t = m - 1; t < masked.cols(); ++t) {
    out.windows.push_back(masked.middleCols(t - m + 1, m));
    out.labels.push_back(labels[static_cast<std::size_t>(t)]);
  }
  return out;
}

int argmax_lowest(const Eigen::Ref<const VectorXd>& scores) {
  Index best = 0;
  for (Index i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(best)) best = i;
  return static_cast<int>(best);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty())
    throw std::invalid_argument("accuracy needs equal, non-empty sequences");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

SequenceDataset one_hot_dataset(const ClassWindows& data, const Normalizer<double>& norm, int num_classes) {
  SequenceDataset out;
  out.targets = MatrixXd::Zero(num_classes, data.size());
  out.observations.reserve(data.windows.size());
  for (Index i = 0; i < data.size(); ++i) {
    out.observations.push_back(norm.apply(data.windows[static_cast<std::size_t>(i)]));
    out.targets(data.labels[static_cast<std::size_t>(i)], i) = 1.0;
  }
  return out;
}

}  // namespace

RecurrentClassifier recurrent_classify_train(const ClassWindows& train, int num_classes, Index hidden_dim,
                                             const TrainConfig& config, const ClassWindows* valid) {
  if (train.size() == 0) throw std::invalid_argument("no training windows");
  std::vector<int> present(static_cast<std::size_t>(num_classes), 0);
  for (int c : train.labels) present.at(static_cast<std::size_t>(c)) = 1;
  if (std::accumulate(present.begin(), present.end(), 0) < 2) throw Error("training data has a single class");

  RecurrentClassifier rc;
  rc.m = train.windows.front().cols();
  rc.num_classes = num_classes;
  const Index features = train.windows.front().rows();
  MatrixXd columns(features, train.size() * rc.m);
  for (Index i = 0; i < train.size(); ++i) columns.middleCols(i * rc.m, rc.m) = train.windows[static_cast<std::size_t>(i)];
  rc.normalizer = fit_normalizer<double>(columns);

  const auto train_data = one_hot_dataset(train, rc.normalizer, num_classes);
  SequenceDataset valid_data;
  if (valid && valid->size() > 0) valid_data = one_hot_dataset(*valid, rc.normalizer, num_classes);
  auto init = GruModel<double>::random(features, hidden_dim, num_classes, config.seed);
  rc.model = gru_train(std::move(init), train_data, config, LossKind::squared_error,
                       valid_data.size() > 0 ? &valid_data : nullptr)
                 .model;
  return rc;
}

int recurrent_classify(const RecurrentClassifier& model, const MatrixXd& window) {
  if (window.cols() != model.m || window.rows() != model.model.input_dim)
    throw Error("window shape does not match the classifier");
  return argmax_lowest(gru_forward<double>(model.model, model.normalizer.apply(window)).output);
}

std::vector<int> recurrent_classify_all(const RecurrentClassifier& model, const ClassWindows& data) {
  std::vector<MatrixXd> seqs;
  seqs.reserve(data.windows.size());
  for (const auto& w : data.windows) seqs.push_back(model.normalizer.apply(w));
  const MatrixXd scores = gru_predict(model.model, seqs);
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Index i = 0; i < scores.cols(); ++i) out[static_cast<std::size_t>(i)] = argmax_lowest(scores.col(i));
  return out;
}

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::forest ? "forest" : "recurrent"; }

namespace {

struct Partitioned {
  MatrixXd train, valid, test;  // F x N single-interval samples, raw
  std::vector<int> train_y, valid_y, test_y;
  ClassWindows train_w, valid_w, test_w;
};

bool covers_all(std::span<const int> labels, int num_classes) {
  std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
  for (int c : labels) seen[static_cast<std::size_t>(c)] = 1;
  return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
}

MatrixXd hcat(const std::vector<MatrixXd>& parts, Index rows) {
  Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  MatrixXd out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  return out;
}

}  // namespace

std::vector<AccuracyCell> run_classification_experiment(std::span<const AppTrace> traces, int num_classes,
                                                        const ClassificationExperimentConfig& config) {
  if (config.feature_sets.size() < 2 || config.taus.size() < 2)
    throw std::invalid_argument("classification grid needs at least two feature sets and two taus");
  if (traces.empty()) throw std::invalid_argument("no labelled traces");

  struct Job {
    ClassifierKind kind;
    std::size_t mask_idx, tau_idx;
  };
  std::vector<Job> jobs;
  for (auto kind : config.classifiers)
    for (std::size_t fs = 0; fs < config.feature_sets.size(); ++fs)
      for (std::size_t ti = 0; ti < config.taus.size(); ++ti) jobs.push_back({kind, fs, ti});

  // Featurize once per tau.
  std::vector<std::vector<LabeledSeries>> per_tau(config.taus.size());
  for (std::size_t ti = 0; ti < config.taus.size(); ++ti)
    for (const auto& tr : traces) per_tau[ti].push_back(featurize(tr.records, config.taus[ti]));

  std::vector<AccuracyCell> cells(jobs.size());
  const auto run = [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& mask = config.feature_sets[job.mask_idx];
    const double tau = config.taus[job.tau_idx];
    AccuracyCell& cell = cells[j];
    cell.classifier = to_string(job.kind);
    cell.feature_set = mask.label();
    cell.tau = tau;
    cell.accuracy = std::numeric_limits<double>::quiet_NaN();
    cell.valid = false;
    try {
      Partitioned part;
      std::vector<MatrixXd> tr_parts, va_parts, te_parts;
      for (std::size_t a = 0; a < traces.size(); ++a) {
        const auto split = split_series(per_tau[job.tau_idx][a], config.train_frac, config.valid_frac);
        const int label = traces[a].label;
        const auto add = [&](const LabeledSeries& s, std::vector<MatrixXd>& parts, std::vector<int>& y,
                             ClassWindows& w) {
          const MatrixXd masked = apply_mask(s, mask);
          parts.push_back(masked);
          y.insert(y.end(), static_cast<std::size_t>(masked.cols()), label);
          if (job.kind == ClassifierKind::recurrent && masked.cols() >= config.window)
            w.append(class_windows(masked, std::vector<int>(static_cast<std::size_t>(masked.cols()), label),
                                   config.window));
        };
        add(split.train, tr_parts, part.train_y, part.train_w);
        add(split.valid, va_parts, part.valid_y, part.valid_w);
        add(split.test, te_parts, part.test_y, part.test_w);
      }
      const Index rows = mask.count();
      if (job.kind == ClassifierKind::forest) {
        part.train = hcat(tr_parts, rows);
        part.test = hcat(te_parts, rows);
        if (!covers_all(part.train_y, num_classes) || !covers_all(part.test_y, num_classes)) return;
        const auto forest = forest_fit(part.train, part.train_y, num_classes, config.forest);
        cell.accuracy = accuracy(forest_predict_all(forest, part.test), part.test_y);
        cell.n_train = part.train.cols();
        cell.n_test = part.test.cols();
      } else {
        if (!covers_all(part.train_w.labels, num_classes) || !covers_all(part.test_w.labels, num_classes)) return;
        const auto model =
            recurrent_classify_train(part.train_w, num_classes, config.hidden_dim, config.train, &part.valid_w);
        cell.accuracy = accuracy(recurrent_classify_all(model, part.test_w), part.test_w.labels);
        cell.n_train = part.train_w.size();
        cell.n_test = part.test_w.size();
      }
      cell.valid = true;
    } catch (const Error&) {
      cell.valid = false;
    }
  };

  const int workers = std::max(1, std::min<int>(config.jobs, static_cast<int>(jobs.size())));
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) run(j);
      });
    for (auto& t : pool) t.join();
  }
  return cells;
}

void write_accuracy_csv(std::ostream& out, std::span<const AccuracyCell> cells) {
  csv::Writer w(out);
  w.header({"classifier", "feature_set", "tau", "accuracy", "n_train", "n_test"});
  for (const auto& c : cells) {
    w.cell(std::string_view(c.classifier)).cell(std::string_view(c.feature_set)).cell(c.tau);
    if (c.valid) w.cell(c.accuracy);
    else w.cell("invalid");
    w.cell(c.n_train).cell(c.n_test);
    w.end_row();
  }
}

}  // namespace tpred
