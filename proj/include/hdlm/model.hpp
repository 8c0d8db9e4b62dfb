#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hdlm/autodiff.hpp"
#include "hdlm/stream.hpp"
#include "hdlm/tensor.hpp"

namespace hdlm::model {

using num::Tensor;
using num::Var;

// Architecture of a hierarchical-decoding transformer.
//
// Level d (1-based) is decoded by head d from the output of layer k_d, where
// k_1 < ... < k_{D-1} are given by `schedule` and k_D is the final layer.
struct ModelConfig {
  int num_layers = 4;
  int hidden = 64;
  int num_heads = 4;
  int ffn_ratio = 4;
  int vocab_size = 128;
  int depth = 2;
  std::vector<int> schedule{2};
  // f_1..f_{D-1}; the last level's weight is fixed to 1.
  std::vector<double> loss_weights{1.0};
  int max_positions = 128;

  int head_dim() const { return hidden / num_heads; }
  int ffn_width() const { return ffn_ratio * hidden; }
  // k_d for d in [0, D]: k_0 = 0, k_D = num_layers.
  int boundary(int level) const;
  double loss_weight(int level) const;
  // Throws ConfigError when a structural invariant is violated.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Tensor attn_gain;  // [E]
  Tensor wq, wk, wv, wo;  // [E,E]
  Tensor ffn_gain;  // [E]
  Tensor w1;  // [E,cE]
  Tensor w2;  // [cE,E]
};

struct Parameters {
  ModelConfig config;
  Tensor embedding;  // [V,E]
  std::vector<LayerWeights> layers;
  std::vector<Tensor> heads;  // H_1..H_D, each [E,V]

  // Every tensor with a stable name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  Tensor* find(const std::string& name);

  // Matrix entries only: (4+2c)KE^2 + VE + D*EV.
  std::uint64_t weight_count() const;
  // weight_count() plus the 2KE normalization gains.
  std::uint64_t parameter_count() const;
};

// Same layout as `like`, all zeros.
Parameters zeros_like(const Parameters& like);
bool bitwise_equal(const Parameters& a, const Parameters& b);

enum class HeadInit { kCopy, kRandom };

Parameters init_model(const ModelConfig& config, std::uint64_t seed, HeadInit heads = HeadInit::kCopy,
                      std::uint64_t head_seed = 0);

// Re-initializes H_1..H_{D-1}: copies of H_D, or fresh draws from `seed`.
Parameters replicate_heads(Parameters params, HeadInit mode, std::uint64_t seed = 0);

struct LayerScheduleReport {
  bool feasible = true;
  // log_3(2D)
  double min_layers_bound = 0.0;
  std::vector<std::string> violations;
};

LayerScheduleReport validate_schedule(const ModelConfig& config);

// Parameters bound to a tape. Leaves are created on first access, so a
// forward pass that never touches a tensor leaves its gradient at zero.
class BoundParameters {
 public:
  struct Layer {
    Var attn_gain, wq, wk, wv, wo, ffn_gain, w1, w2;
  };

  BoundParameters(num::Tape& tape, const Parameters& params, bool requires_grad);

  num::Tape& tape() const { return tape_; }
  const Parameters& params() const { return params_; }
  const ModelConfig& config() const { return params_.config; }

  Var embedding();
  Var head(int level);
  const Layer& layer(int index);

  // Adds the tape gradients of every bound tensor into `out` (scaled).
  void accumulate_gradients(Parameters& out, double weight = 1.0) const;

 private:
  num::Tape& tape_;
  const Parameters& params_;
  bool requires_grad_;
  std::optional<Var> embedding_;
  std::vector<std::optional<Var>> heads_;
  std::vector<std::optional<Layer>> layers_;
};

// Keys (after rotary encoding) and values already produced by one layer.
struct LayerCache {
  Tensor keys;  // [n,E]
  Tensor values;  // [n,E]
  std::size_t length() const { return keys.empty() ? 0 : keys.rows(); }
};

// Pre-norm residual block: x + Attn(RMSNorm(x)), then + FFN(RMSNorm(.)).
// `positions` are absolute stream indices of the rows of `hidden`. Without a
// cache `mask` is [T,T]; with a cache it is [T, cache_length + T], the cached
// entries are attended as constants and the new keys/values are appended.
Var transformer_layer_forward(Var hidden, const BoundParameters::Layer& layer, const ModelConfig& config,
                              std::span<const std::size_t> positions, const num::Mask& mask,
                              LayerCache* cache = nullptr);

// Forwards a stream through layers [first, last). Carried entries take rows of
// `carried` in order; injected tokens are embedded with the shared table.
Var segment_forward(const SegmentStream& stream, Var carried, BoundParameters& params, int first, int last,
                    std::vector<LayerCache>* caches = nullptr);

// H_level applied to each row of `hidden`.
Var head_logits(int level, Var hidden, BoundParameters& params);

}  // namespace hdlm::model
