#include <doctest.h>

#include <filesystem>
#include <random>

#include "tpred/serialize.hpp"

using namespace tpred;
using io::json;

namespace {

template <class T>
json roundtrip(const T& value, T (*back)(const json&)) {
  const json j = io::to_json(value);
  return io::to_json(back(json::parse(j.dump())));
}

}  // namespace

TEST_CASE("matrices are stored row-major") {
  MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const json j = io::matrix_to_json(m);
  CHECK(j["rows"] == 2);
  CHECK(j["cols"] == 3);
  CHECK(j["data"] == json::array({1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
  CHECK(io::matrix_from_json(j) == m);
  json bad = j;
  bad["data"].erase(0);
  CHECK_THROWS(io::matrix_from_json(bad));
}

TEST_CASE("doubles survive a text round trip exactly") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1e3);
  VectorXd v(200);
  for (auto& x : v) x = g(rng);
  CHECK(io::vector_from_json(json::parse(io::vector_to_json(v).dump())) == v);
}

TEST_CASE("GRU and forecaster documents") {
  RecurrentForecaster f;
  f.model = GruModel<double>::random(2, 5, 6, 3);
  f.normalizer = {VectorXd::Constant(2, 4.0), VectorXd::Constant(2, 0.5)};
  f.shape = {7, 2, FeatureMask::named(5), 10.0};
  const json j = io::to_json(f);
  CHECK(io::model_kind(j) == "recurrent_forecaster");
  CHECK(j["format_version"] == io::kFormatVersion);
  const auto back = io::forecaster_from_json(json::parse(j.dump()));
  CHECK(back.shape.m == 7);
  CHECK(back.shape.n == 2);
  CHECK(back.shape.mask == FeatureMask::named(5));
  CHECK(back.model.recur_cand == f.model.recur_cand);
  CHECK(back.model.out_bias == f.model.out_bias);
  CHECK(back.normalizer.sd == f.normalizer.sd);
  CHECK(roundtrip(f, io::forecaster_from_json) == j);

  json wrong = j;
  wrong["kind"] = "arima";
  CHECK_THROWS(io::forecaster_from_json(wrong));
}

TEST_CASE("ARIMA and burst predictor documents") {
  ArimaModel a;
  a.p = 2;
  a.d = 1;
  a.q = 1;
  a.ar_coeffs = VectorXd::LinSpaced(2, 0.1, 0.2);
  a.ma_coeffs = VectorXd::Constant(1, -0.3);
  a.residual_variance = 1.25;
  CHECK(roundtrip(a, io::arima_from_json) == io::to_json(a));
  CHECK(io::arima_from_json(io::to_json(a)).order() == a.order());

  BurstPredictor b;
  b.model = GruModel<double>::random(2, 3, 1, 4, OutputHead::sigmoid);
  b.normalizer = Normalizer<double>::identity(2);
  b.m = 6;
  b.mask = FeatureMask::named(5);
  const auto back = io::burst_predictor_from_json(io::to_json(b));
  CHECK(back.model.head == OutputHead::sigmoid);
  CHECK(back.m == 6);
  CHECK(roundtrip(b, io::burst_predictor_from_json) == io::to_json(b));
}

TEST_CASE("tree and forest documents") {
  MatrixXd x = MatrixXd::Random(3, 60);
  std::vector<int> y(60);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x(0, static_cast<Index>(i)) > 0 ? 1 : (x(1, static_cast<Index>(i)) > 0 ? 2 : 0);
  ForestConfig c;
  c.num_trees = 4;
  c.limits.max_depth = 5;
  const auto forest = forest_fit(x, y, 3, c);
  const auto back = io::forest_from_json(json::parse(io::to_json(forest).dump()));
  CHECK(forest_predict_all(back, x) == forest_predict_all(forest, x));
  CHECK(back.tree_seeds == forest.tree_seeds);
  CHECK(back.config.limits.max_depth == 5);
  CHECK(roundtrip(forest.trees[0], io::tree_from_json) == io::to_json(forest.trees[0]));
}

TEST_CASE("simulation config") {
  CHECK(io::sim_config_from_json(json::object()).service_rate_bps == 45e6);
  SimConfig c;
  c.prediction_prob = 0.25;
  c.spp.rate_heavy = 12.0;
  c.seed = 99;
  const auto back = io::sim_config_from_json(io::to_json(c));
  CHECK(back.prediction_prob == 0.25);
  CHECK(back.spp.rate_heavy == 12.0);
  CHECK(back.seed == 99);
  CHECK_THROWS(io::sim_config_from_json(json{{"service_rate", 1}}));
  CHECK_THROWS(io::sim_config_from_json(json{{"spp", {{"rate", 1}}}}));
  CHECK_THROWS_AS(io::sim_config_from_json(json{{"time_step_s", 5.0}}), Error);
}

TEST_CASE("training config overrides") {
  const auto t = io::train_config_from_json(json{{"epochs", 7}, {"learning_rate", 0.01}});
  CHECK(t.epochs == 7);
  CHECK(t.learning_rate == 0.01);
  CHECK(t.batch_size == TrainConfig{}.batch_size);
  CHECK_THROWS(io::train_config_from_json(json{{"epoch", 7}}));
}

TEST_CASE("JSON files") {
  const auto path = std::filesystem::temp_directory_path() / "tpred_serialize_test.json";
  io::write_json_file(path, json{{"a", 1}});
  CHECK(io::read_json_file(path)["a"] == 1);
  std::filesystem::remove(path);
  CHECK_THROWS(io::read_json_file(path));
}
