#include "hdlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <thread>

#include "hdlm/errors.hpp"

namespace hdlm::train {

using model::EntrySource;
using num::Tensor;
using model::StreamEntry;

std::size_t HierSample::total_length() const {
  std::size_t n = query.size();
  for (const auto& r : responses) n += r.size();
  return n;
}

const char* mode_name(Mode m) { return m == Mode::kFlat ? "flat" : "hier"; }

Mode parse_mode(const std::string& s) {
  if (s == "hier" || s == "hierarchical") return Mode::kHierarchical;
  if (s == "flat") return Mode::kFlat;
  throw ConfigError("unknown mode '" + s + "' (expected hier or flat)");
}

OptimizerState init_optimizer(const Parameters& params) {
  return OptimizerState{model::zeros_like(params), model::zeros_like(params), 0};
}

void validate_sample(const HierSample& sample, const model::ModelConfig& config) {
  if (sample.query.empty()) throw DataError("sample has an empty query");
  if (sample.responses.size() != static_cast<std::size_t>(config.depth)) {
    throw DataError("sample has " + std::to_string(sample.responses.size()) + " responses, model depth is " +
                    std::to_string(config.depth));
  }
  for (std::size_t d = 0; d < sample.responses.size(); ++d) {
    if (sample.responses[d].empty()) throw DataError("response " + std::to_string(d + 1) + " is empty");
  }
  if (sample.total_length() > static_cast<std::size_t>(config.max_positions)) {
    throw DataError("sample length " + std::to_string(sample.total_length()) + " exceeds max_positions " +
                    std::to_string(config.max_positions));
  }
}

SegmentStream build_segment_stream(const HierSample& sample, int level, Mode mode) {
  const int depth = static_cast<int>(sample.responses.size());
  if (level < 1 || level > depth) {
    throw IndexError("level " + std::to_string(level) + " outside [1," + std::to_string(depth) + "]");
  }
  SegmentStream s;
  s.level = level;
  std::size_t pos = 0;
  auto inject = [&](int token, int role) {
    s.entries.push_back(StreamEntry{pos++, EntrySource::kInjected, token, role});
  };

  if (mode == Mode::kFlat) {
    s.level = depth;
    for (int t : sample.query) inject(t, 0);
    for (int d = 1; d <= depth; ++d) {
      for (int t : sample.responses[static_cast<std::size_t>(d - 1)]) {
        s.loss_positions.push_back(pos - 1);
        s.loss_targets.push_back(t);
        inject(t, d);
      }
    }
  } else {
    // Positions before level d's tokens: carried latents, except at level 1
    // where the query itself is injected at layer 0.
    if (level == 1) {
      for (int t : sample.query) inject(t, 0);
    } else {
      for (std::size_t i = 0; i < sample.query.size(); ++i) {
        s.entries.push_back(StreamEntry{pos++, EntrySource::kCarried, -1, 0});
      }
      for (int d = 1; d < level; ++d) {
        for (std::size_t i = 0; i < sample.responses[static_cast<std::size_t>(d - 1)].size(); ++i) {
          s.entries.push_back(StreamEntry{pos++, EntrySource::kCarried, -1, d});
        }
      }
    }
    for (int t : sample.responses[static_cast<std::size_t>(level - 1)]) {
      s.loss_positions.push_back(pos - 1);
      s.loss_targets.push_back(t);
      inject(t, level);
    }
  }
  s.mask = num::causal_mask(s.entries.size());
  return s;
}

Var level_loss(Var logits, const SegmentStream& stream) {
  if (stream.loss_positions.empty()) throw DataError("level loss over an empty set of positions");
  const auto targets = stream.dense_targets();
  const auto active = stream.active_mask();
  return num::cross_entropy(logits, targets, active);
}

double total_loss(std::span<const double> level_losses, std::span<const double> weights) {
  if (level_losses.empty()) return 0.0;
  if (weights.size() + 1 != level_losses.size()) {
    throw ConfigError("total_loss needs " + std::to_string(level_losses.size() - 1) + " weights");
  }
  double total = 0.0;
  for (std::size_t d = 0; d + 1 < level_losses.size(); ++d) total += weights[d] * level_losses[d];
  return total + level_losses.back();
}

Var total_loss(std::span<const Var> level_losses, std::span<const double> weights) {
  if (level_losses.empty()) throw UsageError("total_loss of no levels");
  if (weights.size() + 1 != level_losses.size()) {
    throw ConfigError("total_loss needs " + std::to_string(level_losses.size() - 1) + " weights");
  }
  Var total = level_losses.back();
  for (std::size_t d = level_losses.size() - 1; d-- > 0;) {
    total = num::add(num::scale(level_losses[d], weights[d]), total);
  }
  return total;
}

SampleLosses forward_sample(model::BoundParameters& params, const HierSample& sample, Mode mode,
                            std::span<const double> weights, bool detach_latents) {
  const auto& config = params.config();
  validate_sample(sample, config);
  const int depth = config.depth;
  SampleLosses out;

  if (mode == Mode::kFlat) {
    const SegmentStream stream = build_segment_stream(sample, depth, Mode::kFlat);
    Var hidden = model::segment_forward(stream, Var(), params, 0, config.num_layers);
    Var logits = model::head_logits(depth, hidden, params);
    out.total = level_loss(logits, stream);
    // Per-level diagnostics on the same logits.
    std::size_t offset = 0;
    for (int d = 1; d <= depth; ++d) {
      const std::size_t n = sample.responses[static_cast<std::size_t>(d - 1)].size();
      SegmentStream part = stream;
      part.loss_positions.assign(stream.loss_positions.begin() + static_cast<std::ptrdiff_t>(offset),
                                 stream.loss_positions.begin() + static_cast<std::ptrdiff_t>(offset + n));
      part.loss_targets.assign(stream.loss_targets.begin() + static_cast<std::ptrdiff_t>(offset),
                               stream.loss_targets.begin() + static_cast<std::ptrdiff_t>(offset + n));
      out.per_level.push_back(level_loss(logits, part));
      out.tokens_per_level.push_back(n);
      offset += n;
    }
    return out;
  }

  Var carried;
  for (int d = 1; d <= depth; ++d) {
    const SegmentStream stream = build_segment_stream(sample, d, Mode::kHierarchical);
    Var hidden = model::segment_forward(stream, carried, params, config.boundary(d - 1), config.boundary(d));
    Var logits = model::head_logits(d, hidden, params);
    out.per_level.push_back(level_loss(logits, stream));
    out.tokens_per_level.push_back(stream.loss_positions.size());
    carried = detach_latents ? num::detach(hidden) : hidden;
  }
  out.total = total_loss(out.per_level, weights);
  return out;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("HDLM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

struct SampleResult {
  Parameters grad;
  std::vector<double> per_level;
  double total = 0.0;
  std::vector<std::size_t> tokens;
};

SampleResult run_sample(const Parameters& params, const HierSample& sample, Mode mode,
                        std::span<const double> weights, bool detach, bool with_grad) {
  num::Tape tape(with_grad);
  model::BoundParameters bound(tape, params, with_grad);
  SampleLosses losses = forward_sample(bound, sample, mode, weights, detach);
  SampleResult r;
  for (Var v : losses.per_level) r.per_level.push_back(v.value().item());
  r.total = losses.total.value().item();
  r.tokens = losses.tokens_per_level;
  if (with_grad) {
    tape.backward(losses.total);
    r.grad = model::zeros_like(params);
    bound.accumulate_gradients(r.grad, 1.0);
  }
  return r;
}

std::vector<SampleResult> run_batch(const Parameters& params, std::span<const HierSample> batch, Mode mode,
                                    std::span<const double> weights, bool detach, bool with_grad, int threads) {
  std::vector<SampleResult> results(batch.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      results[i] = run_sample(params, batch[i], mode, weights, detach, with_grad);
    }
    return results;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < batch.size(); i += static_cast<std::size_t>(workers)) {
          results[i] = run_sample(params, batch[i], mode, weights, detach, with_grad);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

LossBreakdown summarize(const std::vector<SampleResult>& results) {
  LossBreakdown b;
  const double inv = 1.0 / static_cast<double>(results.size());
  b.per_level.assign(results.front().per_level.size(), 0.0);
  b.tokens_per_level.assign(results.front().tokens.size(), 0);
  for (const auto& r : results) {
    for (std::size_t d = 0; d < r.per_level.size(); ++d) b.per_level[d] += r.per_level[d] * inv;
    for (std::size_t d = 0; d < r.tokens.size(); ++d) b.tokens_per_level[d] += r.tokens[d];
    b.total += r.total * inv;
  }
  return b;
}

std::vector<double> effective_weights(const model::ModelConfig& config, std::span<const double> weights) {
  if (weights.empty()) return config.loss_weights;
  return {weights.begin(), weights.end()};
}

}  // namespace

LossBreakdown train_step(Parameters& params, std::span<const HierSample> batch, OptimizerState& opt,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw DataError("train_step on an empty batch");
  const auto weights = effective_weights(params.config, cfg.loss_weights);
  const auto results =
      run_batch(params, batch, cfg.mode, weights, cfg.detach_latents, true, resolve_threads(cfg.threads));
  LossBreakdown breakdown = summarize(results);
  if (!std::isfinite(breakdown.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << opt.step << " (total=" << breakdown.total << ", per level:";
    for (double l : breakdown.per_level) os << ' ' << l;
    os << ')';
    throw DivergenceError(os.str());
  }

  // Fixed-order reduction keeps the update independent of worker scheduling.
  Parameters grad = model::zeros_like(params);
  const double inv = 1.0 / static_cast<double>(batch.size());
  {
    std::vector<std::pair<Tensor*, std::string>> dst;
    grad.for_each([&](const std::string& n, Tensor& t) { dst.emplace_back(&t, n); });
    for (const auto& r : results) {
      std::size_t k = 0;
      r.grad.for_each([&](const std::string&, const Tensor& g) {
        Tensor& t = *dst[k++].first;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += inv * g[i];
      });
    }
  }

  const std::int64_t step = opt.step + 1;
  const double lr = cosine_schedule(std::min(step, cfg.total_steps), cfg.total_steps, cfg.learning_rate,
                                    cfg.warmup_fraction);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

  std::vector<Tensor*> ps, gs, ms, vs;
  params.for_each([&](const std::string&, Tensor& t) { ps.push_back(&t); });
  grad.for_each([&](const std::string&, Tensor& t) { gs.push_back(&t); });
  opt.first_moment.for_each([&](const std::string&, Tensor& t) { ms.push_back(&t); });
  opt.second_moment.for_each([&](const std::string&, Tensor& t) { vs.push_back(&t); });
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Tensor& p = *ps[k];
    const Tensor& g = *gs[k];
    Tensor& m = *ms[k];
    Tensor& v = *vs[k];
    // Decoupled decay on matrices only; normalization gains are left alone.
    const double decay = p.rank() == 2 ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + decay * p[i]);
    }
  }
  opt.step = step;
  breakdown.learning_rate = lr;
  return breakdown;
}

LossBreakdown evaluate_losses(const Parameters& params, std::span<const HierSample> batch, Mode mode,
                              std::span<const double> weights) {
  if (batch.empty()) throw DataError("evaluate_losses on an empty batch");
  const auto w = effective_weights(params.config, weights);
  return summarize(run_batch(params, batch, mode, w, false, false, resolve_threads(0)));
}

double cosine_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps <= 0) throw ConfigError("cosine_schedule needs total_steps > 0");
  if (step < 0 || step > total_steps) {
    throw UsageError("step " + std::to_string(step) + " outside [0," + std::to_string(total_steps) + "]");
  }
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warm) return base_lr * s / warm;
  if (s >= total) return 0.0;
  const double progress = (s - warm) / (total - warm);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace hdlm::train
