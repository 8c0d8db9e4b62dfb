#include "hdlm/flop_counter.hpp"

#include <numeric>

namespace hdlm::num {

const char* category_name(OpCategory c) {
  switch (c) {
    case OpCategory::kAttnProjection: return "attn_projection";
    case OpCategory::kAttnScores: return "attn_scores";
    case OpCategory::kFfn: return "ffn";
    case OpCategory::kHead: return "head";
    case OpCategory::kOther: return "other";
  }
  return "unknown";
}

void FlopCounter::record_layer(int layer, std::span<const int> roles) {
  rows_by_layer[layer] += roles.size();
  for (int r : roles) ++layer_traversals_by_role[r];
}

std::uint64_t FlopCounter::matmul_forward() const {
  return std::accumulate(forward.begin(), forward.end(), std::uint64_t{0});
}

std::uint64_t FlopCounter::matmul_backward() const {
  return std::accumulate(backward.begin(), backward.end(), std::uint64_t{0});
}

std::uint64_t count_ops_instrumented(const FlopCounter& run) { return run.matmul_total(); }

}  // namespace hdlm::num
