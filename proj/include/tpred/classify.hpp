#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tpred/ingest.hpp"
#include "tpred/recurrent.hpp"

namespace tpred {

/// Gini impurity 1 - sum p_c^2 of a class histogram.
double gini(std::span<const Index> class_counts);

/// Majority vote; ties go to the lowest class index.
int majority_vote(std::span<const int> votes, int num_classes);

struct TreeLimits {
  int max_depth = std::numeric_limits<int>::max();
  int min_samples_leaf = 1;
  int min_samples_split = 2;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = 0;

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  Index num_features = 0;
  int num_classes = 0;
  TreeLimits limits;

  int depth() const;
  Index leaf_count() const;
};

/// CART with Gini splits at midpoints of consecutive distinct values. `samples` is F x N.
DecisionTree tree_fit(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                      const TreeLimits& limits = {});

/// Left iff x[feature] <= threshold.
int tree_predict(const DecisionTree& tree, const Eigen::Ref<const VectorXd>& x);

struct ForestConfig {
  int num_trees = 50;
  int features_per_split = 0;  // 0 means ceil(sqrt(F))
  bool bootstrap = true;
  TreeLimits limits;
  std::uint64_t seed = 1;
};

struct RandomForest {
  std::vector<DecisionTree> trees;
  std::vector<std::uint64_t> tree_seeds;
  ForestConfig config;
  int features_per_split = 0;  // resolved
  Index num_features = 0;
  int num_classes = 0;
};

RandomForest forest_fit(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                        const ForestConfig& config, int jobs = 1);
int forest_predict(const RandomForest& forest, const Eigen::Ref<const VectorXd>& x);
std::vector<int> forest_predict_all(const RandomForest& forest, const MatrixXd& samples);

namespace detail {
/// Randomized CART used by the forest; features are subsampled at every split.
DecisionTree tree_fit_randomized(const MatrixXd& samples, std::span<const int> labels, int num_classes,
                                 const TreeLimits& limits, int features_per_split, std::mt19937_64* rng);
}  // namespace detail

/// Length-m windows ending at (and including) interval t, labelled with labels[t].
struct ClassWindows {
  std::vector<MatrixXd> windows;  // F x m raw masked features
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(windows.size()); }
  void append(const ClassWindows& other);
};

ClassWindows class_windows(const MatrixXd& masked, std::span<const int> labels, Index m);

struct RecurrentClassifier {
  GruModel<double> model;  // linear head with num_classes scores
  Normalizer<double> normalizer;
  Index m = 1;
  int num_classes = 0;
};

/// Squared error against one-hot targets.
RecurrentClassifier recurrent_classify_train(const ClassWindows& train, int num_classes, Index hidden_dim,
                                             const TrainConfig& config, const ClassWindows* valid = nullptr);
int recurrent_classify(const RecurrentClassifier& model, const MatrixXd& window);
std::vector<int> recurrent_classify_all(const RecurrentClassifier& model, const ClassWindows& data);

/// Index of the largest score, lowest index on ties.
int argmax_lowest(const Eigen::Ref<const VectorXd>& scores);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

enum class ClassifierKind { forest, recurrent };
std::string to_string(ClassifierKind kind);

struct AppTrace {
  int label = 0;
  std::vector<PacketRecord> records;
};

struct ClassificationExperimentConfig {
  std::vector<ClassifierKind> classifiers = {ClassifierKind::forest, ClassifierKind::recurrent};
  std::vector<FeatureMask> feature_sets;
  std::vector<double> taus;
  double train_frac = 0.6;
  double valid_frac = 0.2;
  ForestConfig forest;
  Index window = 5;
  Index hidden_dim = 16;
  TrainConfig train;
  int jobs = 1;
};

struct AccuracyCell {
  std::string classifier;
  std::string feature_set;
  double tau = 0.0;
  double accuracy = 0.0;  // NaN when the cell is invalid
  Index n_train = 0;
  Index n_test = 0;
  bool valid = true;
};

/// Every (classifier, feature set, tau) cell in classifier-major order.
std::vector<AccuracyCell> run_classification_experiment(std::span<const AppTrace> traces, int num_classes,
                                                        const ClassificationExperimentConfig& config);

void write_accuracy_csv(std::ostream& out, std::span<const AccuracyCell> cells);

}  // namespace tpred
