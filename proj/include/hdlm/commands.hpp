#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdlm/checkpoint.hpp"
#include "hdlm/cost_model.hpp"
#include "hdlm/metrics.hpp"
#include "hdlm/run_config.hpp"
#include "hdlm/tokenizer.hpp"

namespace hdlm::cli {

namespace fs = std::filesystem;
using persist::json;

struct TrainResult {
  fs::path final_checkpoint;
  fs::path loss_log;
  std::int64_t steps = 0;
  train::LossBreakdown last;
};

// Refuses an infeasible schedule before reading any data. Writes
// <out>/losses.csv, <out>/final.ckpt, <out>/train_report.json and, when
// checkpoint_every > 0, <out>/checkpoints/step_<N>.ckpt.
TrainResult cmd_train(const persist::RunConfig& cfg);

// Writes <out>/train.jsonl and <out>/eval.jsonl.
void cmd_gen_data(const persist::RunConfig& cfg, const fs::path& out_dir);

// One JSONL record per input query. Returns the bytes written.
std::string cmd_generate(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                         infer::GenerationConfig gen);

// Metric report with scores x100. Written to `output` unless it is empty.
json cmd_eval(const fs::path& checkpoint, const fs::path& dataset, infer::GenerationConfig gen,
              metrics::RougeOptions rouge, const fs::path& output = {});

struct Sweep {
  std::string variable;  // "L2" (last level length) or "k1"; empty for none
  std::vector<cost::Flops> values;
};

struct CostOutput {
  json report;
  std::string sweep_csv;
};

CostOutput cmd_cost(const cost::CostParams& params, const Sweep& sweep = {});

json cmd_validate_schedule(const model::ModelConfig& config);

// Tokenizer stored alongside a checkpoint.
tasks::Tokenizer tokenizer_from_vocab(int depth, const std::vector<std::string>& vocab);

// Fills in level-end stop tokens when the config leaves them empty.
infer::GenerationConfig with_stop_tokens(infer::GenerationConfig gen, const tasks::Tokenizer& tok);

}  // namespace hdlm::cli
