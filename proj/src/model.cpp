#include "hdlm/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "hdlm/errors.hpp"

namespace hdlm::model {

namespace {

constexpr double kInitStd = 0.02;

Tensor normal_tensor(num::Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

}  // namespace

// ---------------------------------------------------------------- config

int ModelConfig::boundary(int level) const {
  if (level < 0 || level > depth) throw IndexError("level " + std::to_string(level) + " outside [0," + std::to_string(depth) + "]");
  if (level == 0) return 0;
  if (level == depth) return num_layers;
  return schedule.at(sz(level - 1));
}

double ModelConfig::loss_weight(int level) const {
  if (level < 1 || level > depth) throw IndexError("level " + std::to_string(level));
  if (level == depth) return 1.0;
  return loss_weights.at(sz(level - 1));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (hidden < 1 || num_heads < 1) fail("hidden and num_heads must be positive");
  if (hidden % num_heads != 0) fail("hidden must be divisible by num_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary encoding");
  if (ffn_ratio < 1) fail("ffn_ratio must be >= 1");
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (depth < 1) fail("depth must be >= 1");
  if (max_positions < 1) fail("max_positions must be positive");
  if (schedule.size() != sz(depth - 1)) {
    fail("schedule must list depth-1 = " + std::to_string(depth - 1) + " layer indices");
  }
  if (loss_weights.size() != sz(depth - 1)) fail("loss_weights must list depth-1 weights");
  int prev = 0;
  for (int k : schedule) {
    if (k <= prev) fail("schedule must be strictly increasing and positive");
    prev = k;
  }
  if (!schedule.empty() && schedule.back() >= num_layers) fail("schedule entries must be < num_layers");
  for (double f : loss_weights) {
    if (!(f > 0.0)) fail("loss weights must be positive");
  }
}

// ---------------------------------------------------------------- parameters

void Parameters::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& w = layers[l];
    fn(p + "attn_gain", w.attn_gain);
    fn(p + "wq", w.wq);
    fn(p + "wk", w.wk);
    fn(p + "wv", w.wv);
    fn(p + "wo", w.wo);
    fn(p + "ffn_gain", w.ffn_gain);
    fn(p + "w1", w.w1);
    fn(p + "w2", w.w2);
  }
  for (std::size_t d = 0; d < heads.size(); ++d) fn("heads." + std::to_string(d), heads[d]);
}

void Parameters::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<Parameters*>(this)->for_each([&](const std::string& n, Tensor& t) { fn(n, t); });
}

Tensor* Parameters::find(const std::string& name) {
  Tensor* found = nullptr;
  for_each([&](const std::string& n, Tensor& t) {
    if (n == name) found = &t;
  });
  return found;
}

std::uint64_t Parameters::weight_count() const {
  std::uint64_t n = 0;
  for_each([&](const std::string&, const Tensor& t) {
    if (t.rank() == 2) n += t.size();
  });
  return n;
}

std::uint64_t Parameters::parameter_count() const {
  std::uint64_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Parameters zeros_like(const Parameters& like) {
  Parameters z = like;
  z.for_each([](const std::string&, Tensor& t) { std::fill(t.data().begin(), t.data().end(), 0.0); });
  return z;
}

bool bitwise_equal(const Parameters& a, const Parameters& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Tensor*> ta;
  std::vector<const Tensor*> tb;
  a.for_each([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  b.for_each([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!num::bitwise_equal(*ta[i], *tb[i])) return false;
  }
  return true;
}

Parameters init_model(const ModelConfig& config, std::uint64_t seed, HeadInit heads, std::uint64_t head_seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t e = sz(config.hidden);
  const std::size_t v = sz(config.vocab_size);
  const std::size_t f = sz(config.ffn_width());
  const double out_std = kInitStd / std::sqrt(2.0 * config.num_layers);

  Parameters p;
  p.config = config;
  p.embedding = normal_tensor({v, e}, kInitStd, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights w;
    w.attn_gain = Tensor::filled({e}, 1.0);
    w.wq = normal_tensor({e, e}, kInitStd, rng);
    w.wk = normal_tensor({e, e}, kInitStd, rng);
    w.wv = normal_tensor({e, e}, kInitStd, rng);
    w.wo = normal_tensor({e, e}, out_std, rng);
    w.ffn_gain = Tensor::filled({e}, 1.0);
    w.w1 = normal_tensor({e, f}, kInitStd, rng);
    w.w2 = normal_tensor({f, e}, out_std, rng);
    p.layers.push_back(std::move(w));
  }
  p.heads.assign(sz(config.depth), Tensor());
  p.heads.back() = normal_tensor({e, v}, kInitStd, rng);
  return replicate_heads(std::move(p), heads, head_seed);
}

Parameters replicate_heads(Parameters params, HeadInit mode, std::uint64_t seed) {
  if (params.heads.empty() || params.heads.back().empty()) throw UsageError("replicate_heads needs a final head");
  const Tensor& last = params.heads.back();
  std::mt19937_64 rng(seed);
  for (std::size_t d = 0; d + 1 < params.heads.size(); ++d) {
    params.heads[d] = mode == HeadInit::kCopy ? last : normal_tensor(last.shape(), kInitStd, rng);
  }
  return params;
}

// ---------------------------------------------------------------- binding

BoundParameters::BoundParameters(num::Tape& tape, const Parameters& params, bool requires_grad)
    : tape_(tape),
      params_(params),
      requires_grad_(requires_grad),
      heads_(params.heads.size()),
      layers_(params.layers.size()) {}

Var BoundParameters::embedding() {
  if (!embedding_) embedding_ = tape_.leaf_ref(params_.embedding, requires_grad_);
  return *embedding_;
}

Var BoundParameters::head(int level) {
  if (level < 1 || sz(level) > heads_.size()) {
    throw IndexError("head level " + std::to_string(level) + " outside [1," + std::to_string(heads_.size()) + "]");
  }
  auto& slot = heads_[sz(level - 1)];
  if (!slot) slot = tape_.leaf_ref(params_.heads[sz(level - 1)], requires_grad_);
  return *slot;
}

const BoundParameters::Layer& BoundParameters::layer(int index) {
  if (index < 0 || sz(index) >= layers_.size()) throw IndexError("layer " + std::to_string(index));
  auto& slot = layers_[sz(index)];
  if (!slot) {
    const auto& w = params_.layers[sz(index)];
    auto bind = [&](const Tensor& t) { return tape_.leaf_ref(t, requires_grad_); };
    slot = Layer{bind(w.attn_gain), bind(w.wq), bind(w.wk), bind(w.wv),
                 bind(w.wo), bind(w.ffn_gain), bind(w.w1), bind(w.w2)};
  }
  return *slot;
}

void BoundParameters::accumulate_gradients(Parameters& out, double weight) const {
  auto add = [&](Var v, Tensor& dst) {
    Tensor g = tape_.grad(v);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * g[i];
  };
  if (embedding_) add(*embedding_, out.embedding);
  for (std::size_t d = 0; d < heads_.size(); ++d) {
    if (heads_[d]) add(*heads_[d], out.heads[d]);
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!layers_[l]) continue;
    const auto& b = *layers_[l];
    auto& w = out.layers[l];
    add(b.attn_gain, w.attn_gain);
    add(b.wq, w.wq);
    add(b.wk, w.wk);
    add(b.wv, w.wv);
    add(b.wo, w.wo);
    add(b.ffn_gain, w.ffn_gain);
    add(b.w1, w.w1);
    add(b.w2, w.w2);
  }
}

// ---------------------------------------------------------------- forward

Var transformer_layer_forward(Var hidden, const BoundParameters::Layer& layer, const ModelConfig& config,
                              std::span<const std::size_t> positions, const num::Mask& mask, LayerCache* cache) {
  using num::OpCategory;
  num::Tape& tape = *hidden.tape();
  const std::size_t t = hidden.value().rows();
  const std::size_t cached = cache ? cache->length() : 0;
  if (cached + t > sz(config.max_positions) ||
      (!positions.empty() && positions.back() >= sz(config.max_positions))) {
    throw CapacityError("stream of " + std::to_string(cached + t) + " positions exceeds max_positions " +
                        std::to_string(config.max_positions));
  }
  if (mask.rows != t || mask.cols != cached + t) {
    throw DimensionError("attention mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         " for " + std::to_string(t) + " queries over " + std::to_string(cached + t) + " keys");
  }
  const std::size_t hd = sz(config.head_dim());

  Var normed = num::rms_norm(hidden, layer.attn_gain);
  Var q, k, v;
  {
    num::CategoryScope scope(tape, OpCategory::kAttnProjection);
    q = num::matmul(normed, layer.wq);
    k = num::matmul(normed, layer.wk);
    v = num::matmul(normed, layer.wv);
  }
  q = num::rope(q, positions, hd);
  k = num::rope(k, positions, hd);
  if (cache) {
    if (cached > 0) {
      Var ck = tape.constant(cache->keys);
      Var cv = tape.constant(cache->values);
      const Var kparts[] = {ck, k};
      const Var vparts[] = {cv, v};
      k = num::concat_rows(kparts);
      v = num::concat_rows(vparts);
      cache->keys = k.value();
      cache->values = v.value();
    } else {
      cache->keys = k.value();
      cache->values = v.value();
    }
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Var> head_out;
  head_out.reserve(sz(config.num_heads));
  {
    num::CategoryScope scope(tape, OpCategory::kAttnScores);
    for (int h = 0; h < config.num_heads; ++h) {
      const std::size_t off = sz(h) * hd;
      Var qh = num::slice_cols(q, off, hd);
      Var kh = num::slice_cols(k, off, hd);
      Var vh = num::slice_cols(v, off, hd);
      Var scores = num::scale(num::matmul_nt(qh, kh), inv_sqrt);
      Var probs = num::masked_softmax_rows(scores, mask);
      head_out.push_back(num::matmul(probs, vh));
    }
  }
  Var attn;
  {
    num::CategoryScope scope(tape, OpCategory::kAttnProjection);
    attn = num::matmul(num::concat_cols(head_out), layer.wo);
  }
  Var x = num::add(hidden, attn);

  Var h2 = num::rms_norm(x, layer.ffn_gain);
  Var ffn;
  {
    num::CategoryScope scope(tape, OpCategory::kFfn);
    Var up = num::gelu(num::matmul(h2, layer.w1));
    ffn = num::matmul(up, layer.w2);
  }
  return num::add(x, ffn);
}

Var segment_forward(const SegmentStream& stream, Var carried, BoundParameters& params, int first, int last,
                    std::vector<LayerCache>* caches) {
  const ModelConfig& config = params.config();
  if (first < 0 || first > last || last > config.num_layers) {
    throw IndexError("layer range [" + std::to_string(first) + "," + std::to_string(last) + ") with " +
                     std::to_string(config.num_layers) + " layers");
  }
  const std::size_t n_carried = stream.carried_count();
  if (n_carried > 0) {
    if (!carried.valid() || carried.value().rows() != n_carried || carried.value().cols() != sz(config.hidden)) {
      throw DimensionError("stream has " + std::to_string(n_carried) + " carried entries but latents are " +
                           (carried.valid() ? num::shape_string(carried.value().shape()) : std::string("absent")));
    }
  }
  num::Tape& tape = params.tape();
  const std::vector<int> tokens = stream.injected_tokens();
  std::vector<Var> parts;
  if (n_carried > 0) parts.push_back(carried);
  if (!tokens.empty()) parts.push_back(num::embedding(params.embedding(), tokens));
  Var x = parts.size() == 1 ? parts[0] : num::concat_rows(parts);

  const std::vector<std::size_t> positions = stream.positions();
  const std::vector<int> roles = stream.roles();
  for (int l = first; l < last; ++l) {
    LayerCache* cache = caches ? &caches->at(sz(l)) : nullptr;
    const std::size_t offset = cache ? cache->length() : 0;
    if (cache && offset > 0 && positions.front() != offset) {
      throw UsageError("stream positions do not continue the layer cache");
    }
    const num::Mask mask = offset > 0 ? num::causal_mask(stream.size(), offset) : stream.mask;
    if (tape.counter()) tape.counter()->record_layer(l, roles);
    x = transformer_layer_forward(x, params.layer(l), config, positions, mask, cache);
  }
  return x;
}

Var head_logits(int level, Var hidden, BoundParameters& params) {
  Var h = params.head(level);
  num::CategoryScope scope(params.tape(), num::OpCategory::kHead);
  return num::matmul(hidden, h);
}

}  // namespace hdlm::model
