#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hdlm/flop_counter.hpp"
#include "hdlm/model.hpp"
#include "hdlm/training.hpp"

namespace hdlm::infer {

using model::Parameters;
using num::Tensor;
using train::Mode;

struct GenerationConfig {
  // Per-level cap on decoded tokens; a single entry applies to every level.
  std::vector<int> max_len{16};
  // 0 = greedy.
  double temperature = 0.0;
  // 0 = no top-k filtering.
  int top_k = 0;
  // Level-end token per level.
  std::vector<int> stop_tokens;
  std::uint64_t seed = 0;
  Mode mode = Mode::kHierarchical;

  int max_len_for(int level) const;
  int stop_token_for(int level) const;
  void validate(int depth) const;
};

// Incremental decoding state. `latents` holds, for every materialized
// position, the output of layer k_{boundary_level}.
struct DecodeState {
  std::vector<model::LayerCache> caches;  // one per layer
  Tensor latents;
  int boundary_level = 1;
  std::vector<int> tokens;
  std::vector<int> roles;
  std::size_t query_length = 0;
  std::vector<std::vector<int>> decoded;
  std::vector<double> logprob_sums;
  int levels_done = 0;
  std::mt19937_64 rng;

  std::size_t position() const { return tokens.size(); }
};

struct HierOutput {
  std::vector<std::vector<int>> responses;
  std::vector<std::size_t> lengths;
  std::vector<double> mean_logprob;
};

// Called with the logits used to pick each decoded token.
using LogitObserver = std::function<void(int level, const DecodeState& state, const Tensor& logits)>;

// Query through layers [0, k_1) (all layers in flat mode).
DecodeState prefill(std::span<const int> query, const Parameters& params, const GenerationConfig& config,
                    num::FlopCounter* counter = nullptr);

// Decodes level `level`, which must be the next undecoded level.
std::vector<int> decode_level(DecodeState& state, int level, const Parameters& params,
                              const GenerationConfig& config, num::FlopCounter* counter = nullptr,
                              const LogitObserver& observer = {});

HierOutput generate(std::span<const int> query, const Parameters& params, const GenerationConfig& config,
                    num::FlopCounter* counter = nullptr);

// Chooses a token from one row of logits; returns the token and its
// untempered log-probability.
std::pair<int, double> pick_token(std::span<const double> logits, double temperature, int top_k,
                                  std::mt19937_64& rng);

}  // namespace hdlm::infer
