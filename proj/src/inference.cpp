#include "hdlm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hdlm/errors.hpp"

namespace hdlm::infer {

using model::EntrySource;
using model::SegmentStream;
using model::StreamEntry;
using num::Var;

int GenerationConfig::max_len_for(int level) const {
  if (max_len.empty()) throw ConfigError("generation max_len is empty");
  return max_len.size() == 1 ? max_len[0] : max_len.at(static_cast<std::size_t>(level - 1));
}

int GenerationConfig::stop_token_for(int level) const {
  if (static_cast<std::size_t>(level) > stop_tokens.size()) return -1;
  return stop_tokens[static_cast<std::size_t>(level - 1)];
}

void GenerationConfig::validate(int depth) const {
  if (max_len.empty() || (max_len.size() != 1 && max_len.size() != static_cast<std::size_t>(depth))) {
    throw ConfigError("max_len must have 1 or depth entries");
  }
  for (int m : max_len) {
    if (m < 1) throw ConfigError("max_len must be >= 1");
  }
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (top_k < 0) throw ConfigError("top_k must be >= 0");
}

namespace {

SegmentStream single_token_stream(int token, std::size_t position, int role) {
  SegmentStream s;
  s.entries.push_back(StreamEntry{position, EntrySource::kInjected, token, role});
  s.mask = num::causal_mask(1);
  return s;
}

void append_row(Tensor& dst, const Tensor& row) {
  const std::size_t cols = row.cols();
  std::vector<double> data = dst.empty() ? std::vector<double>{} : dst.storage();
  data.insert(data.end(), row.data().begin(), row.data().end());
  const std::size_t rows = data.size() / cols;
  dst = Tensor({rows, cols}, std::move(data));
}

Tensor last_row(const Tensor& t) {
  const auto r = t.row(t.rows() - 1);
  return Tensor({1, t.cols()}, std::vector<double>(r.begin(), r.end()));
}

}  // namespace

std::pair<int, double> pick_token(std::span<const double> logits, double temperature, int top_k,
                                  std::mt19937_64& rng) {
  if (logits.empty()) throw UsageError("pick_token on empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);

  int chosen = 0;
  if (temperature == 0.0) {
    chosen = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  } else {
    std::vector<double> w(logits.size());
    double cutoff = -std::numeric_limits<double>::infinity();
    if (top_k > 0 && static_cast<std::size_t>(top_k) < logits.size()) {
      std::vector<double> sorted(logits.begin(), logits.end());
      std::nth_element(sorted.begin(), sorted.begin() + (top_k - 1), sorted.end(), std::greater<>());
      cutoff = sorted[static_cast<std::size_t>(top_k - 1)];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      w[i] = logits[i] >= cutoff ? std::exp((logits[i] - mx) / temperature) : 0.0;
      total += w[i];
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    chosen = static_cast<int>(logits.size()) - 1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      if (r < w[i]) {
        chosen = static_cast<int>(i);
        break;
      }
      r -= w[i];
    }
  }
  return {chosen, logits[static_cast<std::size_t>(chosen)] - lse};
}

DecodeState prefill(std::span<const int> query, const Parameters& params, const GenerationConfig& config,
                    num::FlopCounter* counter) {
  const auto& mc = params.config;
  config.validate(mc.depth);
  if (query.empty()) throw DataError("empty query");
  if (query.size() > static_cast<std::size_t>(mc.max_positions)) {
    throw CapacityError("query of " + std::to_string(query.size()) + " tokens exceeds max_positions " +
                        std::to_string(mc.max_positions));
  }
  DecodeState state;
  state.caches.resize(static_cast<std::size_t>(mc.num_layers));
  state.rng.seed(config.seed);
  state.query_length = query.size();
  state.tokens.assign(query.begin(), query.end());
  state.roles.assign(query.size(), 0);

  SegmentStream stream;
  for (std::size_t i = 0; i < query.size(); ++i) {
    stream.entries.push_back(StreamEntry{i, EntrySource::kInjected, query[i], 0});
  }
  stream.mask = num::causal_mask(query.size());

  const bool flat = config.mode == Mode::kFlat;
  const int last = flat ? mc.num_layers : mc.boundary(1);
  num::Tape tape(false);
  tape.set_counter(counter);
  model::BoundParameters bound(tape, params, false);
  state.latents = model::segment_forward(stream, Var(), bound, 0, last, &state.caches).value();
  state.boundary_level = flat ? mc.depth : 1;
  return state;
}

std::vector<int> decode_level(DecodeState& state, int level, const Parameters& params,
                              const GenerationConfig& config, num::FlopCounter* counter,
                              const LogitObserver& observer) {
  const auto& mc = params.config;
  if (level < 1 || level > mc.depth) throw IndexError("decode level " + std::to_string(level));
  if (state.levels_done != level - 1) {
    throw ProtocolError("decode_level(" + std::to_string(level) + ") called after " +
                        std::to_string(state.levels_done) + " decoded levels");
  }
  const bool flat = config.mode == Mode::kFlat;
  const int first = flat ? 0 : mc.boundary(level - 1);
  const int last = flat ? mc.num_layers : mc.boundary(level);
  const int head = flat ? mc.depth : level;

  if (!flat && state.boundary_level != level) {
    // Carry every materialized position across the boundary into this segment.
    SegmentStream stream;
    for (std::size_t i = 0; i < state.tokens.size(); ++i) {
      stream.entries.push_back(StreamEntry{i, EntrySource::kCarried, -1, state.roles[i]});
    }
    stream.mask = num::causal_mask(state.tokens.size());
    num::Tape tape(false);
    tape.set_counter(counter);
    model::BoundParameters bound(tape, params, false);
    Var carried = tape.constant(state.latents);
    state.latents = model::segment_forward(stream, carried, bound, first, last, &state.caches).value();
    state.boundary_level = level;
  }

  const int stop = config.stop_token_for(level);
  const int max_len = config.max_len_for(level);
  std::vector<int> out;
  double logprob = 0.0;
  for (int step = 0; step < max_len; ++step) {
    num::Tape tape(false);
    tape.set_counter(counter);
    model::BoundParameters bound(tape, params, false);
    Var h = tape.constant(last_row(state.latents));
    const Tensor logits = model::head_logits(head, h, bound).value();
    if (observer) observer(level, state, logits);
    const auto [token, lp] = pick_token(logits.data(), config.temperature, config.top_k, state.rng);
    out.push_back(token);
    logprob += lp;

    const std::size_t pos = state.tokens.size();
    const SegmentStream stream = single_token_stream(token, pos, level);
    state.tokens.push_back(token);
    state.roles.push_back(level);
    const Tensor row = model::segment_forward(stream, Var(), bound, first, last, &state.caches).value();
    append_row(state.latents, row);
    if (token == stop) break;
  }
  state.decoded.push_back(out);
  state.logprob_sums.push_back(logprob);
  state.levels_done = level;
  return out;
}

HierOutput generate(std::span<const int> query, const Parameters& params, const GenerationConfig& config,
                    num::FlopCounter* counter) {
  DecodeState state = prefill(query, params, config, counter);
  HierOutput out;
  for (int d = 1; d <= params.config.depth; ++d) {
    auto tokens = decode_level(state, d, params, config, counter);
    out.lengths.push_back(tokens.size());
    out.mean_logprob.push_back(state.logprob_sums.back() / static_cast<double>(tokens.size()));
    out.responses.push_back(std::move(tokens));
  }
  return out;
}

}  // namespace hdlm::infer
