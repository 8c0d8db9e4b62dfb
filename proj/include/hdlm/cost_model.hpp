#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hdlm/flop_counter.hpp"

namespace hdlm::cost {

using Flops = std::uint64_t;

enum class Phase { kTrain, kInfer };

// paper: the closed forms exactly as derived for D = 2 (batch term omitted,
//        quadratic attention and head terms dropped).
// asymptotic: B*L*(8+4c)*K*E^2 per forward.
// exact: keeps the 4L^2E attention and 2LEV head terms.
// full: exact plus query prefill for both variants and the boundary prefill
//       of every later segment at inference.
enum class CostMode { kPaper, kAsymptotic, kExact, kFull };

const char* cost_mode_name(CostMode m);
CostMode parse_cost_mode(const std::string& s);

enum class Variant { kBaseline, kHdlm };

struct CostParams {
  Flops batch = 1;
  Flops input_length = 1;  // L
  std::vector<Flops> level_lengths{1, 1};  // L_1..L_D
  Flops hidden = 1;  // E
  Flops vocab = 1;  // V
  Flops layers = 2;  // K
  std::vector<Flops> schedule{1};  // k_1..k_{D-1}
  Flops ffn_ratio = 4;  // c
  CostMode mode = CostMode::kPaper;

  static CostParams two_level(Flops batch, Flops input_length, Flops l1, Flops l2, Flops hidden, Flops vocab,
                              Flops layers, Flops k1, Flops ffn_ratio, CostMode mode = CostMode::kPaper);

  std::size_t depth() const { return level_lengths.size(); }
  // k_d with k_0 = 0 and k_D = K.
  Flops boundary(std::size_t level) const;
  // (8 + 4c) E^2
  Flops f() const;
  // Throws ConfigError on inconsistent parameters. k_1 = 0 is allowed as a
  // degenerate schedule.
  void validate() const;
};

// 8BLE^2 + 4BL^2E (train) or 4BE^2 + 4BE(L+t-1) (infer, t-th decoded token).
Flops attn_flops(Phase phase, Flops batch, Flops length, Flops hidden, Flops t = 0);
// 4BcLE^2 (train) or 4Bc(L+t-1)E^2 (infer).
Flops ffn_flops(Phase phase, Flops batch, Flops length, Flops ffn_ratio, Flops hidden, Flops t = 0);
// 2LEV
Flops decode_head_flops(Flops length, Flops hidden, Flops vocab);

// One forward pass over `length` tokens under p.mode.
Flops forward_flops(const CostParams& p, Flops length);

// Training counts a forward and two backward passes (3x forward).
Flops train_flops(Variant variant, const CostParams& p);
Flops infer_flops(Variant variant, const CostParams& p);

struct Linearity {
  std::vector<double> x;
  std::vector<double> savings;
  double second_difference = 0.0;
  double r_squared = 1.0;
};

struct CostReport {
  CostMode mode = CostMode::kPaper;
  Flops train_baseline = 0;
  Flops train_hdlm = 0;
  std::int64_t train_savings = 0;
  double train_reduction_pct = 0.0;
  Flops infer_baseline = 0;
  Flops infer_hdlm = 0;
  std::int64_t infer_savings = 0;
  double infer_reduction_pct = 0.0;
  // Instrumented tally of a matching training run, if one was supplied.
  std::optional<Flops> counter_measured;
  std::optional<double> counter_delta;
  // Training savings as L_D and k_1 vary with everything else fixed.
  std::optional<Linearity> vs_last_length;
  std::optional<Linearity> vs_first_boundary;
  bool extrapolated = false;  // D != 2
};

CostReport savings_report(const CostParams& p, std::optional<Flops> measured_train_hdlm = std::nullopt);

// Affine fit quality of y against x.
double r_squared(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hdlm::cost
