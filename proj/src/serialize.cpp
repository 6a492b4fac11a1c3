#include "tpred/serialize.hpp"

#include <fstream>
#include <set>

namespace tpred::io {

namespace {

void check_kind(const json& j, std::string_view kind) {
  if (!j.is_object() || !j.contains("kind") || j.at("kind") != kind)
    throw Error("expected a " + std::string(kind) + " document");
  if (j.value("format_version", 0) != kFormatVersion) throw Error("unsupported format_version");
}

json document(std::string_view kind) {
  return json{{"kind", kind}, {"format_version", kFormatVersion}};
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, std::string_view what) {
  if (!j.is_object()) throw Error(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw Error("unknown " + std::string(what) + " key '" + key + "'");
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string head_name(OutputHead h) { return h == OutputHead::sigmoid ? "sigmoid" : "linear"; }

OutputHead parse_head(const std::string& s) {
  if (s == "sigmoid") return OutputHead::sigmoid;
  if (s == "linear") return OutputHead::linear;
  throw Error("unknown output head '" + s + "'");
}

}  // namespace

json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
    throw Error("matrix data does not match its shape");
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)];
  return m;
}

json vector_to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vector_from_json(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(data.data(), static_cast<Index>(data.size()));
}

json to_json(const FeatureMask& mask) { return mask.bit_string(); }

FeatureMask mask_from_json(const json& j) { return FeatureMask::parse(j.get<std::string>()); }

json to_json(const GruModel<double>& model) {
  json j{{"input_dim", model.input_dim},
         {"hidden_dim", model.hidden_dim},
         {"output_dim", model.output_dim},
         {"head", head_name(model.head)}};
  visit_parameters(model, [&](std::string_view name, const auto& p) {
    j[std::string(name)] = matrix_to_json(MatrixXd(p));
  });
  return j;
}

GruModel<double> gru_from_json(const json& j) {
  auto model = GruModel<double>::zeros(j.at("input_dim").get<Index>(), j.at("hidden_dim").get<Index>(),
                                       j.at("output_dim").get<Index>(), parse_head(j.at("head").get<std::string>()));
  visit_parameters(model, [&](std::string_view name, auto& p) {
    const MatrixXd m = matrix_from_json(j.at(std::string(name)));
    if (m.rows() != p.rows() || m.cols() != p.cols())
      throw Error("parameter '" + std::string(name) + "' has the wrong shape");
    p = m;
  });
  return model;
}

json to_json(const Normalizer<double>& n) {
  return json{{"mean", vector_to_json(n.mean)}, {"sd", vector_to_json(n.sd)}};
}

Normalizer<double> normalizer_from_json(const json& j) {
  Normalizer<double> n{vector_from_json(j.at("mean")), vector_from_json(j.at("sd"))};
  if (n.mean.size() != n.sd.size()) throw Error("normalizer mean and sd differ in length");
  return n;
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},         {"learning_rate", c.learning_rate}, {"truncation", c.truncation},
              {"batch_size", c.batch_size}, {"seed", c.seed},                   {"keep_best", c.keep_best},
              {"patience", c.patience}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig base) {
  reject_unknown(j, {"epochs", "learning_rate", "truncation", "batch_size", "seed", "keep_best", "patience"},
                 "training");
  read_opt(j, "epochs", base.epochs);
  read_opt(j, "learning_rate", base.learning_rate);
  read_opt(j, "truncation", base.truncation);
  read_opt(j, "batch_size", base.batch_size);
  read_opt(j, "seed", base.seed);
  read_opt(j, "keep_best", base.keep_best);
  read_opt(j, "patience", base.patience);
  return base;
}

json to_json(const ArimaModel& model) {
  json j = document("arima");
  j["p"] = model.p;
  j["d"] = model.d;
  j["q"] = model.q;
  j["ar_coeffs"] = vector_to_json(model.ar_coeffs);
  j["ma_coeffs"] = vector_to_json(model.ma_coeffs);
  j["intercept"] = model.intercept;
  j["residual_variance"] = model.residual_variance;
  return j;
}

ArimaModel arima_from_json(const json& j) {
  check_kind(j, "arima");
  ArimaModel m;
  m.p = j.at("p").get<int>();
  m.d = j.at("d").get<int>();
  m.q = j.at("q").get<int>();
  m.ar_coeffs = vector_from_json(j.at("ar_coeffs"));
  m.ma_coeffs = vector_from_json(j.at("ma_coeffs"));
  m.intercept = j.at("intercept").get<double>();
  m.residual_variance = j.at("residual_variance").get<double>();
  if (m.ar_coeffs.size() != m.p || m.ma_coeffs.size() != m.q) throw Error("ARIMA coefficients do not match the order");
  return m;
}

json to_json(const RecurrentForecaster& f) {
  json j = document("recurrent_forecaster");
  j["m"] = f.shape.m;
  j["n"] = f.shape.n;
  j["mask"] = to_json(f.shape.mask);
  j["tau"] = f.shape.tau;
  j["normalizer"] = to_json(f.normalizer);
  j["model"] = to_json(f.model);
  return j;
}

RecurrentForecaster forecaster_from_json(const json& j) {
  check_kind(j, "recurrent_forecaster");
  RecurrentForecaster f;
  f.shape.m = j.at("m").get<Index>();
  f.shape.n = j.at("n").get<Index>();
  f.shape.mask = mask_from_json(j.at("mask"));
  f.shape.tau = j.at("tau").get<double>();
  f.normalizer = normalizer_from_json(j.at("normalizer"));
  f.model = gru_from_json(j.at("model"));
  const Index features = f.shape.mask.count();
  if (f.model.input_dim != features || f.normalizer.dim() != features ||
      f.model.output_dim != features * (f.shape.n + 1))
    throw Error("forecaster dimensions are inconsistent");
  return f;
}

json to_json(const BurstPredictor& p) {
  json j = document("burst_predictor");
  j["m"] = p.m;
  j["mask"] = to_json(p.mask);
  j["normalizer"] = to_json(p.normalizer);
  j["model"] = to_json(p.model);
  return j;
}

BurstPredictor burst_predictor_from_json(const json& j) {
  check_kind(j, "burst_predictor");
  BurstPredictor p;
  p.m = j.at("m").get<Index>();
  p.mask = mask_from_json(j.at("mask"));
  p.normalizer = normalizer_from_json(j.at("normalizer"));
  p.model = gru_from_json(j.at("model"));
  if (p.model.input_dim != p.mask.count() || p.model.output_dim != 1) throw Error("burst predictor shape mismatch");
  return p;
}

json to_json(const DecisionTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
  return json{{"num_features", tree.num_features},
              {"num_classes", tree.num_classes},
              {"max_depth", tree.limits.max_depth},
              {"min_samples_leaf", tree.limits.min_samples_leaf},
              {"min_samples_split", tree.limits.min_samples_split},
              {"nodes", nodes}};
}

DecisionTree tree_from_json(const json& j) {
  DecisionTree t;
  t.num_features = j.at("num_features").get<Index>();
  t.num_classes = j.at("num_classes").get<int>();
  t.limits.max_depth = j.at("max_depth").get<int>();
  t.limits.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  t.limits.min_samples_split = j.at("min_samples_split").get<int>();
  const auto size = static_cast<int>(j.at("nodes").size());
  for (const auto& n : j.at("nodes")) {
    TreeNode node{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                  n.at(4).get<int>()};
    if (!node.is_leaf() && (node.feature >= t.num_features || node.left <= 0 || node.right <= 0 ||
                            node.left >= size || node.right >= size))
      throw Error("malformed tree node");
    t.nodes.push_back(node);
  }
  if (t.nodes.empty()) throw Error("tree has no nodes");
  return t;
}

json to_json(const RandomForest& forest) {
  json j = document("random_forest");
  j["num_features"] = forest.num_features;
  j["num_classes"] = forest.num_classes;
  j["features_per_split"] = forest.features_per_split;
  j["num_trees"] = forest.config.num_trees;
  j["bootstrap"] = forest.config.bootstrap;
  j["seed"] = forest.config.seed;
  j["tree_seeds"] = forest.tree_seeds;
  json trees = json::array();
  for (const auto& t : forest.trees) trees.push_back(to_json(t));
  j["trees"] = trees;
  return j;
}

RandomForest forest_from_json(const json& j) {
  check_kind(j, "random_forest");
  RandomForest f;
  f.num_features = j.at("num_features").get<Index>();
  f.num_classes = j.at("num_classes").get<int>();
  f.features_per_split = j.at("features_per_split").get<int>();
  f.config.num_trees = j.at("num_trees").get<int>();
  f.config.bootstrap = j.at("bootstrap").get<bool>();
  f.config.seed = j.at("seed").get<std::uint64_t>();
  f.config.features_per_split = f.features_per_split;
  f.tree_seeds = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
  for (const auto& t : j.at("trees")) f.trees.push_back(tree_from_json(t));
  if (f.trees.empty() || static_cast<int>(f.trees.size()) != f.config.num_trees) throw Error("forest tree count mismatch");
  f.config.limits = f.trees.front().limits;
  return f;
}

json to_json(const SimConfig& c) {
  return json{{"service_rate_bps", c.service_rate_bps},
              {"n_type1", c.n_type1},
              {"n_type2", c.n_type2},
              {"spp",
               {{"rate_light", c.spp.rate_light},
                {"rate_heavy", c.spp.rate_heavy},
                {"mean_light_duration_s", c.spp.mean_light_duration},
                {"mean_heavy_duration_s", c.spp.mean_heavy_duration},
                {"burst_size_bits", c.spp.burst_size_bits}}},
              {"pp", {{"rate", c.pp.rate}, {"chunk_size_bits", c.pp.chunk_size_bits}}},
              {"sim_duration_s", c.sim_duration_s},
              {"time_step_s", c.time_step_s},
              {"prediction_prob", c.prediction_prob},
              {"prediction_lead_s", c.prediction_lead_s},
              {"prefetch_horizon_s", c.prefetch_horizon_s},
              {"seed", c.seed}};
}

SimConfig sim_config_from_json(const json& j) {
  reject_unknown(j,
                 {"service_rate_bps", "n_type1", "n_type2", "spp", "pp", "sim_duration_s", "time_step_s",
                  "prediction_prob", "prediction_lead_s", "prefetch_horizon_s", "seed"},
                 "simulation config");
  SimConfig c;
  read_opt(j, "service_rate_bps", c.service_rate_bps);
  read_opt(j, "n_type1", c.n_type1);
  read_opt(j, "n_type2", c.n_type2);
  read_opt(j, "sim_duration_s", c.sim_duration_s);
  read_opt(j, "time_step_s", c.time_step_s);
  read_opt(j, "prediction_prob", c.prediction_prob);
  read_opt(j, "prediction_lead_s", c.prediction_lead_s);
  read_opt(j, "prefetch_horizon_s", c.prefetch_horizon_s);
  read_opt(j, "seed", c.seed);
  if (j.contains("spp")) {
    const auto& s = j.at("spp");
    reject_unknown(s, {"rate_light", "rate_heavy", "mean_light_duration_s", "mean_heavy_duration_s", "burst_size_bits"},
                   "spp");
    read_opt(s, "rate_light", c.spp.rate_light);
    read_opt(s, "rate_heavy", c.spp.rate_heavy);
    read_opt(s, "mean_light_duration_s", c.spp.mean_light_duration);
    read_opt(s, "mean_heavy_duration_s", c.spp.mean_heavy_duration);
    read_opt(s, "burst_size_bits", c.spp.burst_size_bits);
  }
  if (j.contains("pp")) {
    const auto& p = j.at("pp");
    reject_unknown(p, {"rate", "chunk_size_bits"}, "pp");
    read_opt(p, "rate", c.pp.rate);
    read_opt(p, "chunk_size_bits", c.pp.chunk_size_bits);
  }
  c.validate();
  return c;
}

std::string model_kind(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) throw Error("document has no kind");
  return j.at("kind").get<std::string>();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace tpred::io
