#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>

namespace hdlm::num {

// What a counted operation belongs to. Only matrix products in the first
// four categories enter the closed-form cost comparison.
enum class OpCategory : std::uint8_t {
  kAttnProjection,
  kAttnScores,
  kFfn,
  kHead,
  kOther,
};
inline constexpr std::size_t kNumCategories = 5;

const char* category_name(OpCategory c);

// Per-run tally of floating-point work. Matrix products count 2 FLOPs per
// multiply-accumulate. Normalization, activation, rotary and softmax work is
// tallied separately as `excluded`.
struct FlopCounter {
  std::array<std::uint64_t, kNumCategories> forward{};
  std::array<std::uint64_t, kNumCategories> backward{};
  std::uint64_t excluded_forward = 0;
  std::uint64_t excluded_backward = 0;

  // Sum over layers of rows pushed through the layer, keyed by the stream
  // role of the row (0 = query, d = level-d response).
  std::map<int, std::uint64_t> layer_traversals_by_role;
  // Rows pushed through each layer index.
  std::map<int, std::uint64_t> rows_by_layer;

  void record_layer(int layer, std::span<const int> roles);

  std::uint64_t matmul_forward() const;
  std::uint64_t matmul_backward() const;
  std::uint64_t matmul_total() const { return matmul_forward() + matmul_backward(); }

  void reset() { *this = FlopCounter{}; }
};

// Measured matrix-product FLOPs (forward plus backward) of a recorded run.
std::uint64_t count_ops_instrumented(const FlopCounter& run);

}  // namespace hdlm::num
