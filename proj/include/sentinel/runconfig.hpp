#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "sentinel/model.hpp"
#include "sentinel/trainer.hpp"
#include "sentinel/transforms.hpp"

namespace sentinel::cfg {

using json = nlohmann::ordered_json;

json model_spec_to_json(const model::ModelSpec& spec);
model::ModelSpec model_spec_from_json(const json& j);

json train_config_to_json(const train::TrainConfig& cfg);
train::TrainConfig train_config_from_json(const json& j);

json transform_config_to_json(const tf::TransformConfig& cfg);
tf::TransformConfig transform_config_from_json(const json& j);

/// Everything one run needs. A fully resolved copy is written into the run
/// directory before any work starts.
struct RunConfig {
  uint64_t seed = 7;
  std::filesystem::path out_dir = "run";
  std::filesystem::path manifest;
  model::ModelSpec model;
  train::TrainConfig train;
  tf::TransformConfig transform;
};

json run_config_to_json(const RunConfig& rc);
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& file);
void write_resolved_config(const RunConfig& rc);

}  // namespace sentinel::cfg
