#include "hdlm/cost_model.hpp"

#include <cmath>
#include <numeric>

#include "hdlm/errors.hpp"

namespace hdlm::cost {

namespace {

Flops mul(Flops a, Flops b) {
  Flops r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw ConfigError("FLOPs count overflows 64 bits");
  return r;
}

template <typename... T>
Flops mul(Flops a, Flops b, T... rest) {
  return mul(mul(a, b), rest...);
}

Flops add(Flops a, Flops b) {
  Flops r = 0;
  if (__builtin_add_overflow(a, b, &r)) throw ConfigError("FLOPs count overflows 64 bits");
  return r;
}

// sum_{j=1}^{n} (start + j - 1)
Flops arithmetic_sum(Flops start, Flops n) {
  if (n == 0) return 0;
  // n*start + n(n-1)/2, halving whichever factor is even
  const Flops tri = (n % 2 == 0) ? mul(n / 2, n - 1) : mul(n, (n - 1) / 2);
  return add(mul(n, start), tri);
}

// sum_{j=1}^{n} (start + j - 1)^2
Flops square_sum(Flops start, Flops n) {
  auto sq = [](Flops m) -> Flops {  // sum_{i=1}^{m} i^2
    // m(m+1)(2m+1)/6 with the divisions folded in to stay exact
    Flops a = m, b = m + 1, c = 2 * m + 1;
    if (a % 2 == 0) a /= 2; else b /= 2;
    if (a % 3 == 0) a /= 3; else if (b % 3 == 0) b /= 3; else c /= 3;
    return mul(a, b, c);
  };
  if (n == 0) return 0;
  const Flops hi = start + n - 1;
  return sq(hi) - (start == 0 ? 0 : sq(start - 1));
}

// Per-sample cost of one layer over n tokens: (8+4c)nE^2 + 4n^2E.
Flops layer_cost(const CostParams& p, Flops n) {
  return add(mul(p.f(), n), mul(4, n, n, p.hidden));
}

// sum over j=1..n of layer_cost(start + j - 1)
Flops layer_cost_sum(const CostParams& p, Flops start, Flops n) {
  return add(mul(p.f(), arithmetic_sum(start, n)), mul(4, p.hidden, square_sum(start, n)));
}

Flops head_cost(const CostParams& p, Flops n) { return decode_head_flops(n, p.hidden, p.vocab); }

Flops prefix_length(const CostParams& p, std::size_t levels) {
  Flops n = p.input_length;
  for (std::size_t i = 0; i < levels; ++i) n = add(n, p.level_lengths[i]);
  return n;
}

Flops segment_layers(const CostParams& p, std::size_t level) { return p.boundary(level) - p.boundary(level - 1); }

Flops train_paper(Variant v, const CostParams& p) {
  const std::size_t depth = p.depth();
  if (v == Variant::kBaseline) return mul(3, p.f(), p.layers, prefix_length(p, depth));
  Flops total = 0;
  for (std::size_t d = 1; d <= depth; ++d) {
    total = add(total, mul(3, p.f(), segment_layers(p, d), prefix_length(p, d)));
  }
  return total;
}

Flops train_exact(Variant v, const CostParams& p) {
  const std::size_t depth = p.depth();
  if (v == Variant::kBaseline) {
    const Flops n = prefix_length(p, depth);
    return mul(3, p.batch, add(mul(p.layers, layer_cost(p, n)), head_cost(p, n)));
  }
  Flops per_sample = 0;
  for (std::size_t d = 1; d <= depth; ++d) {
    const Flops n = prefix_length(p, d);
    per_sample = add(per_sample, add(mul(segment_layers(p, d), layer_cost(p, n)), head_cost(p, n)));
  }
  return mul(3, p.batch, per_sample);
}

Flops infer_paper(Variant v, const CostParams& p) {
  const std::size_t depth = p.depth();
  if (v == Variant::kBaseline) {
    return mul(p.f(), p.layers, arithmetic_sum(p.input_length, prefix_length(p, depth) - p.input_length));
  }
  Flops total = 0;
  for (std::size_t d = 1; d <= depth; ++d) {
    const Flops start = prefix_length(p, d - 1);
    total = add(total, mul(p.f(), segment_layers(p, d), arithmetic_sum(start, p.level_lengths[d - 1])));
  }
  return total;
}

// Token t of a level whose context starts at `start` re-runs its layers over
// start + t - 1 positions and applies the head to them.
Flops infer_exact(Variant v, const CostParams& p, bool with_prefill) {
  const std::size_t depth = p.depth();
  Flops per_sample = 0;
  if (v == Variant::kBaseline) {
    const Flops n = prefix_length(p, depth) - p.input_length;
    per_sample = add(mul(p.layers, layer_cost_sum(p, p.input_length, n)),
                     mul(2, p.hidden, p.vocab, arithmetic_sum(p.input_length, n)));
    if (with_prefill) per_sample = add(per_sample, mul(p.layers, layer_cost(p, p.input_length)));
    return mul(p.batch, per_sample);
  }
  for (std::size_t d = 1; d <= depth; ++d) {
    const Flops start = prefix_length(p, d - 1);
    const Flops n = p.level_lengths[d - 1];
    const Flops layers = segment_layers(p, d);
    per_sample = add(per_sample, add(mul(layers, layer_cost_sum(p, start, n)),
                                     mul(2, p.hidden, p.vocab, arithmetic_sum(start, n))));
    // Level 1 prefills the query; later levels forward the carried context
    // through their own segment before decoding.
    if (with_prefill) per_sample = add(per_sample, mul(layers, layer_cost(p, start)));
  }
  return mul(p.batch, per_sample);
}

double pct(std::int64_t savings, Flops baseline) {
  return baseline == 0 ? 0.0 : 100.0 * static_cast<double>(savings) / static_cast<double>(baseline);
}

std::int64_t signed_diff(Flops a, Flops b) {
  return a >= b ? static_cast<std::int64_t>(a - b) : -static_cast<std::int64_t>(b - a);
}

Linearity linearity(const std::vector<double>& x, const std::vector<double>& y) {
  Linearity l;
  l.x = x;
  l.savings = y;
  l.second_difference = y[2] - 2.0 * y[1] + y[0];
  l.r_squared = r_squared(x, y);
  return l;
}

}  // namespace

const char* cost_mode_name(CostMode m) {
  switch (m) {
    case CostMode::kPaper: return "paper";
    case CostMode::kAsymptotic: return "asymptotic";
    case CostMode::kExact: return "exact";
    case CostMode::kFull: return "full";
  }
  return "?";
}

CostMode parse_cost_mode(const std::string& s) {
  if (s == "paper") return CostMode::kPaper;
  if (s == "asymptotic") return CostMode::kAsymptotic;
  if (s == "exact") return CostMode::kExact;
  if (s == "full") return CostMode::kFull;
  throw ConfigError("unknown cost mode '" + s + "' (expected paper, asymptotic, exact or full)");
}

CostParams CostParams::two_level(Flops batch, Flops input_length, Flops l1, Flops l2, Flops hidden, Flops vocab,
                                 Flops layers, Flops k1, Flops ffn_ratio, CostMode mode) {
  CostParams p;
  p.batch = batch;
  p.input_length = input_length;
  p.level_lengths = {l1, l2};
  p.hidden = hidden;
  p.vocab = vocab;
  p.layers = layers;
  p.schedule = {k1};
  p.ffn_ratio = ffn_ratio;
  p.mode = mode;
  return p;
}

Flops CostParams::boundary(std::size_t level) const {
  if (level == 0) return 0;
  if (level >= depth()) return layers;
  return schedule.at(level - 1);
}

Flops CostParams::f() const { return mul(add(8, mul(4, ffn_ratio)), hidden, hidden); }

void CostParams::validate() const {
  if (batch == 0 || input_length == 0 || hidden == 0 || vocab == 0 || layers == 0 || ffn_ratio == 0) {
    throw ConfigError("cost parameters B, L, E, V, K, c must be positive");
  }
  if (level_lengths.empty()) throw ConfigError("cost parameters need at least one level length");
  if (schedule.size() + 1 != level_lengths.size()) {
    throw ConfigError("schedule needs depth-1 entries, got " + std::to_string(schedule.size()) + " for depth " +
                      std::to_string(level_lengths.size()));
  }
  Flops prev = 0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] >= layers) throw ConfigError("decoding layer k must be < K");
    if (i > 0 && schedule[i] <= prev) throw ConfigError("schedule must be strictly increasing");
    prev = schedule[i];
  }
}

Flops attn_flops(Phase phase, Flops batch, Flops length, Flops hidden, Flops t) {
  if (phase == Phase::kTrain) {
    if (t != 0) throw UsageError("attn_flops: t is only meaningful at inference");
    return add(mul(8, batch, length, hidden, hidden), mul(4, batch, length, length, hidden));
  }
  if (t == 0) throw UsageError("attn_flops: inference needs t >= 1");
  return add(mul(4, batch, hidden, hidden), mul(4, batch, hidden, length + t - 1));
}

Flops ffn_flops(Phase phase, Flops batch, Flops length, Flops ffn_ratio, Flops hidden, Flops t) {
  if (phase == Phase::kTrain) {
    if (t != 0) throw UsageError("ffn_flops: t is only meaningful at inference");
    return mul(4, batch, ffn_ratio, length, hidden, hidden);
  }
  if (t == 0) throw UsageError("ffn_flops: inference needs t >= 1");
  return mul(4, batch, ffn_ratio, length + t - 1, hidden, hidden);
}

Flops decode_head_flops(Flops length, Flops hidden, Flops vocab) { return mul(2, length, hidden, vocab); }

Flops forward_flops(const CostParams& p, Flops length) {
  if (p.mode == CostMode::kPaper || p.mode == CostMode::kAsymptotic) {
    return mul(p.batch, length, p.f(), p.layers);
  }
  return mul(p.batch, add(mul(p.layers, layer_cost(p, length)), head_cost(p, length)));
}

Flops train_flops(Variant variant, const CostParams& p) {
  p.validate();
  switch (p.mode) {
    case CostMode::kPaper:
      return train_paper(variant, p);
    case CostMode::kAsymptotic:
      return mul(p.batch, train_paper(variant, p));
    case CostMode::kExact:
    case CostMode::kFull:
      return train_exact(variant, p);
  }
  return 0;
}

Flops infer_flops(Variant variant, const CostParams& p) {
  p.validate();
  switch (p.mode) {
    case CostMode::kPaper:
      return infer_paper(variant, p);
    case CostMode::kAsymptotic:
      return mul(p.batch, infer_paper(variant, p));
    case CostMode::kExact:
      return infer_exact(variant, p, false);
    case CostMode::kFull:
      return infer_exact(variant, p, true);
  }
  return 0;
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0 || sxx == 0.0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

CostReport savings_report(const CostParams& p, std::optional<Flops> measured_train_hdlm) {
  p.validate();
  CostReport r;
  r.mode = p.mode;
  r.extrapolated = p.depth() != 2;
  r.train_baseline = train_flops(Variant::kBaseline, p);
  r.train_hdlm = train_flops(Variant::kHdlm, p);
  r.train_savings = signed_diff(r.train_baseline, r.train_hdlm);
  r.train_reduction_pct = pct(r.train_savings, r.train_baseline);
  r.infer_baseline = infer_flops(Variant::kBaseline, p);
  r.infer_hdlm = infer_flops(Variant::kHdlm, p);
  r.infer_savings = signed_diff(r.infer_baseline, r.infer_hdlm);
  r.infer_reduction_pct = pct(r.infer_savings, r.infer_baseline);
  if (measured_train_hdlm) {
    r.counter_measured = *measured_train_hdlm;
    r.counter_delta = std::abs(static_cast<double>(*measured_train_hdlm) - static_cast<double>(r.train_hdlm)) /
                      static_cast<double>(r.train_hdlm);
  }

  auto savings_at = [&](auto&& tweak) {
    CostParams q = p;
    tweak(q);
    return static_cast<double>(signed_diff(train_flops(Variant::kBaseline, q), train_flops(Variant::kHdlm, q)));
  };

  {
    const Flops base = p.level_lengths.back();
    const Flops step = std::max<Flops>(1, base);
    std::vector<double> x, y;
    for (Flops i = 0; i < 3; ++i) {
      const Flops len = base + i * step;
      x.push_back(static_cast<double>(len));
      y.push_back(savings_at([&](CostParams& q) { q.level_lengths.back() = len; }));
    }
    r.vs_last_length = linearity(x, y);
  }

  // Three consecutive k_1 values that keep the schedule valid.
  const Flops upper = p.schedule.size() > 1 ? p.schedule[1] : p.layers;
  if (!p.schedule.empty() && upper >= 4) {
    const Flops lo = std::min(std::max<Flops>(1, p.schedule[0]), upper - 3);
    std::vector<double> x, y;
    for (Flops k = lo; k < lo + 3; ++k) {
      x.push_back(static_cast<double>(k));
      y.push_back(savings_at([&](CostParams& q) { q.schedule[0] = k; }));
    }
    r.vs_first_boundary = linearity(x, y);
  }
  return r;
}

}  // namespace hdlm::cost
