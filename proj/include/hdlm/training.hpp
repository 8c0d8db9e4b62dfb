#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hdlm/model.hpp"

namespace hdlm::train {

using model::Parameters;
using model::SegmentStream;
using num::Var;

// One record: query tokens plus D response sequences, each already
// terminated by its level-end token.
struct HierSample {
  std::vector<int> query;
  std::vector<std::vector<int>> responses;

  std::size_t total_length() const;
  friend bool operator==(const HierSample&, const HierSample&) = default;
};

// kHierarchical: level d is injected at layer k_{d-1} and decoded by H_d.
// kFlat: the whole sequence goes through all layers and H_D decodes every
// response token (the sft@K baseline).
enum class Mode { kHierarchical, kFlat };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int epochs = 1;
  // Number of optimizer updates the cosine schedule spans.
  std::int64_t total_steps = 1;
  double warmup_fraction = 0.03;
  // f_1..f_{D-1}; empty means use the model config's weights.
  std::vector<double> loss_weights;
  std::uint64_t seed = 0;
  Mode mode = Mode::kHierarchical;
  // Stop gradients at segment boundaries (ablation switch).
  bool detach_latents = false;
  // Worker threads for per-sample passes; 0 = HDLM_THREADS or hardware.
  int threads = 0;
};

struct LossBreakdown {
  std::vector<double> per_level;
  double total = 0.0;
  std::vector<std::size_t> tokens_per_level;
  // Rate applied by the update that produced this breakdown.
  double learning_rate = 0.0;
};

// AdamW moments, shaped like the parameters.
struct OptimizerState {
  Parameters first_moment;
  Parameters second_moment;
  std::int64_t step = 0;
};

OptimizerState init_optimizer(const Parameters& params);

// Throws DataError when the sample does not fit the model.
void validate_sample(const HierSample& sample, const model::ModelConfig& config);

SegmentStream build_segment_stream(const HierSample& sample, int level, Mode mode);

// Mean -log p of the stream's loss targets, one term per loss position.
Var level_loss(Var logits, const SegmentStream& stream);

// sum_{d<D} f_d L_d + L_D
double total_loss(std::span<const double> level_losses, std::span<const double> weights);
Var total_loss(std::span<const Var> level_losses, std::span<const double> weights);

struct SampleLosses {
  std::vector<Var> per_level;
  Var total;
  std::vector<std::size_t> tokens_per_level;
};

// Records the full forward pass for one sample on the bound parameters' tape.
SampleLosses forward_sample(model::BoundParameters& params, const HierSample& sample, Mode mode,
                            std::span<const double> weights, bool detach_latents = false);

// One optimizer update on the mean of per-sample total losses.
LossBreakdown train_step(Parameters& params, std::span<const HierSample> batch, OptimizerState& opt,
                         const TrainConfig& cfg);

// Losses without an update.
LossBreakdown evaluate_losses(const Parameters& params, std::span<const HierSample> batch, Mode mode,
                              std::span<const double> weights = {});

// Linear warmup to base_lr over warmup_fraction * total_steps, then cosine decay to 0.
double cosine_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction);

int resolve_threads(int requested);

}  // namespace hdlm::train
