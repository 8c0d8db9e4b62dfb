#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "hdlm/cost_model.hpp"
#include "hdlm/inference.hpp"
#include "hdlm/model.hpp"
#include "hdlm/tasks.hpp"
#include "hdlm/training.hpp"

namespace hdlm::persist {

using nlohmann::json;

struct DataConfig {
  std::string task = "htc";  // htc | htg
  tasks::SyntheticSpec spec;
  int eval_samples = 200;
};

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  infer::GenerationConfig generation;
  DataConfig data;
  std::string train_data;
  std::string eval_data;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;
  model::HeadInit head_init = model::HeadInit::kCopy;
  // Checkpoint every N optimizer steps; 0 writes only the final one.
  std::int64_t checkpoint_every = 0;
  // Overrides epochs when > 0.
  std::int64_t max_steps = 0;
  // Size the vocabulary from the training data instead of model.vocab_size.
  bool auto_vocab = true;
};

// Every loader throws ConfigError with the offending key on bad input.
json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const json& j);
json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const json& j);
json to_json(const infer::GenerationConfig& c);
infer::GenerationConfig generation_config_from_json(const json& j);
json to_json(const tasks::SyntheticSpec& s);
tasks::SyntheticSpec synthetic_spec_from_json(const json& j);
json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);
json to_json(const cost::CostParams& p);
cost::CostParams cost_params_from_json(const json& j);
json to_json(const cost::CostReport& r);
json to_json(const model::LayerScheduleReport& r);

// Relative data paths resolve against the config file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace hdlm::persist
