#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tpred/arima.hpp"
#include "tpred/burst.hpp"
#include "tpred/classify.hpp"
#include "tpred/netsim.hpp"
#include "tpred/recurrent.hpp"

namespace tpred::io {

using nlohmann::json;

constexpr int kFormatVersion = 1;

/// {"rows", "cols", "data"} with data in row-major order.
json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const json& j);
json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const json& j);

json to_json(const FeatureMask& mask);
FeatureMask mask_from_json(const json& j);

json to_json(const GruModel<double>& model);
GruModel<double> gru_from_json(const json& j);

json to_json(const Normalizer<double>& n);
Normalizer<double> normalizer_from_json(const json& j);

json to_json(const TrainConfig& c);
/// Keys present in `j` override `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const json& j, TrainConfig base = {});

// Model documents carry "kind" and "format_version".
json to_json(const ArimaModel& model);
ArimaModel arima_from_json(const json& j);

json to_json(const RecurrentForecaster& f);
RecurrentForecaster forecaster_from_json(const json& j);

json to_json(const BurstPredictor& p);
BurstPredictor burst_predictor_from_json(const json& j);

json to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const json& j);
json to_json(const RandomForest& forest);
RandomForest forest_from_json(const json& j);

json to_json(const SimConfig& c);
/// Missing keys keep the defaults; unknown keys are rejected.
SimConfig sim_config_from_json(const json& j);

std::string model_kind(const json& j);

json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace tpred::io
