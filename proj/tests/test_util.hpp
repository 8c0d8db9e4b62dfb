#pragma once

// Test-only helpers: random data, naive reference implementations that
// share no code with the library, and a plain trainer built only from the
// primitive ops.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hdlm/grad_check.hpp"
#include "hdlm/model.hpp"
#include "hdlm/training.hpp"

namespace hdlm::testing {

using model::LayerWeights;
using model::ModelConfig;
using model::Parameters;
using num::Shape;
using num::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = nd(rng);
  return t;
}

inline ModelConfig tiny_config(int layers = 3, std::vector<int> schedule = {1}, int depth = 2) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden = 8;
  c.num_heads = 2;
  c.ffn_ratio = 2;
  c.vocab_size = 11;
  c.depth = depth;
  c.schedule = std::move(schedule);
  c.loss_weights.assign(static_cast<std::size_t>(depth - 1), 1.0);
  c.max_positions = 64;
  return c;
}

// Tiny models start with near-uniform outputs; larger weights give the
// oracles something to disagree about.
inline Parameters random_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.3) {
  Parameters p = model::init_model(c, seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::normal_distribution<double> nd(0.0, scale);
  p.for_each([&](const std::string& name, Tensor& t) {
    if (t.rank() == 1) {
      for (double& v : t.storage()) v = 1.0 + 0.2 * nd(rng);
    } else {
      for (double& v : t.storage()) v = nd(rng);
    }
    (void)name;
  });
  return p;
}

inline train::HierSample random_sample(const ModelConfig& c, std::mt19937_64& rng, int query_len = 4,
                                       int response_len = 3) {
  std::uniform_int_distribution<int> tok(3, c.vocab_size - 1);
  train::HierSample s;
  for (int i = 0; i < query_len; ++i) s.query.push_back(tok(rng));
  for (int d = 0; d < c.depth; ++d) {
    std::vector<int> r;
    for (int i = 0; i < response_len; ++i) r.push_back(tok(rng));
    s.responses.push_back(std::move(r));
  }
  return s;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      out.at(i, j) = static_cast<double>(acc);
    }
  }
  return out;
}

// Two passes: mean of squares first, then the scaled copy.
inline std::vector<double> naive_rms(std::span<const double> x, std::span<const double> gain, double eps = 1e-5) {
  double ms = 0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double r = 1.0 / std::sqrt(ms + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * r * gain[i];
  return out;
}

inline double naive_gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }

inline std::vector<double> vec_mat(const std::vector<double>& v, const Tensor& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += v[i] * w.at(i, j);
  }
  return out;
}

// Rotates consecutive pairs of each head block by position / 10000^(2i/hd).
inline void naive_rope(std::vector<double>& v, std::size_t position, std::size_t hd) {
  for (std::size_t h = 0; h < v.size(); h += hd) {
    for (std::size_t i = 0; i < hd / 2; ++i) {
      const double theta = static_cast<double>(position) / std::pow(10000.0, 2.0 * i / static_cast<double>(hd));
      const double a = v[h + 2 * i], b = v[h + 2 * i + 1];
      v[h + 2 * i] = a * std::cos(theta) - b * std::sin(theta);
      v[h + 2 * i + 1] = a * std::sin(theta) + b * std::cos(theta);
    }
  }
}

// One pre-norm block over rows `x` at the given absolute positions, causal.
inline std::vector<std::vector<double>> naive_layer(const std::vector<std::vector<double>>& x, const LayerWeights& w,
                                                   const ModelConfig& c, const std::vector<std::size_t>& positions) {
  const std::size_t n = x.size(), e = static_cast<std::size_t>(c.hidden), hd = static_cast<std::size_t>(c.head_dim());
  std::vector<std::vector<double>> q(n), k(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto normed = naive_rms(x[i], w.attn_gain.data());
    q[i] = vec_mat(normed, w.wq);
    k[i] = vec_mat(normed, w.wk);
    v[i] = vec_mat(normed, w.wv);
    naive_rope(q[i], positions[i], hd);
    naive_rope(k[i], positions[i], hd);
  }
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> heads(e, 0.0);
    for (std::size_t h = 0; h < e; h += hd) {
      std::vector<double> s(i + 1);
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (std::size_t t = 0; t < hd; ++t) dot += q[i][h + t] * k[j][h + t];
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (double& sj : s) z += (sj = std::exp(sj - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        for (std::size_t t = 0; t < hd; ++t) heads[h + t] += s[j] / z * v[j][h + t];
      }
    }
    const auto attn = vec_mat(heads, w.wo);
    std::vector<double> x1(e);
    for (std::size_t t = 0; t < e; ++t) x1[t] = x[i][t] + attn[t];
    auto up = vec_mat(naive_rms(x1, w.ffn_gain.data()), w.w1);
    for (double& u : up) u = naive_gelu(u);
    const auto down = vec_mat(up, w.w2);
    out[i].resize(e);
    for (std::size_t t = 0; t < e; ++t) out[i][t] = x1[t] + down[t];
  }
  return out;
}

inline std::vector<double> embed_row(const Parameters& p, int token) {
  const auto r = p.embedding.row(static_cast<std::size_t>(token));
  return {r.begin(), r.end()};
}

// Cacheless recompute of the logits for the next level-`level` token: the
// materialized tokens are pushed through the naive layers with each role
// entering at its segment's first layer.
inline std::vector<double> naive_next_logits(const Parameters& p, const std::vector<int>& tokens,
                                             const std::vector<int>& roles, int level) {
  const auto& c = p.config;
  std::vector<std::vector<double>> rows;
  std::size_t next = 0;
  auto admit = [&](int max_role) {
    while (next < tokens.size() && roles[next] <= max_role) rows.push_back(embed_row(p, tokens[next++]));
  };
  admit(1);
  for (int d = 1; d <= level; ++d) {
    if (d > 1) admit(d);
    for (int l = c.boundary(d - 1); l < c.boundary(d); ++l) {
      std::vector<std::size_t> pos(rows.size());
      for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
      rows = naive_layer(rows, p.layers[static_cast<std::size_t>(l)], c, pos);
    }
  }
  return vec_mat(rows.back(), p.heads[static_cast<std::size_t>(level - 1)]);
}

struct NaiveHierResult {
  std::vector<double> level_losses;
  // hidden[d-1]: rows entering head d, one per stream position.
  std::vector<std::vector<std::vector<double>>> hidden;
};

// Single pass over the whole stream: level-d tokens are appended to the
// running rows just before layer k_{d-1}; level d is read out at k_d.
inline NaiveHierResult naive_hier_forward(const Parameters& p, const train::HierSample& s) {
  const auto& c = p.config;
  NaiveHierResult res;
  std::vector<std::vector<double>> rows;
  for (int t : s.query) rows.push_back(embed_row(p, t));
  std::size_t start = s.query.size();
  std::vector<std::size_t> level_start;
  int level = 1;
  level_start.push_back(start);
  for (int t : s.responses[0]) rows.push_back(embed_row(p, t));

  auto read_out = [&](int d) {
    res.hidden.push_back(rows);
    const auto& r = s.responses[static_cast<std::size_t>(d - 1)];
    const std::size_t st = level_start[static_cast<std::size_t>(d - 1)];
    double loss = 0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const auto logits = vec_mat(rows[st - 1 + j], p.heads[static_cast<std::size_t>(d - 1)]);
      double mx = -INFINITY;
      for (double l : logits) mx = std::max(mx, l);
      double z = 0;
      for (double l : logits) z += std::exp(l - mx);
      loss += (mx + std::log(z)) - logits[static_cast<std::size_t>(r[j])];
    }
    res.level_losses.push_back(loss / static_cast<double>(r.size()));
  };

  for (int layer = 0; layer < c.num_layers; ++layer) {
    while (level < c.depth && layer == c.boundary(level)) {
      read_out(level);
      start += s.responses[static_cast<std::size_t>(level - 1)].size();
      level_start.push_back(start);
      ++level;
      for (int t : s.responses[static_cast<std::size_t>(level - 1)]) rows.push_back(embed_row(p, t));
    }
    std::vector<std::size_t> pos(rows.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    rows = naive_layer(rows, p.layers[static_cast<std::size_t>(layer)], c, pos);
  }
  read_out(c.depth);
  return res;
}

inline double weighted_total(const std::vector<double>& losses, const std::vector<double>& weights) {
  double total = losses.back();
  for (std::size_t d = 0; d + 1 < losses.size(); ++d) total += weights[d] * losses[d];
  return total;
}

// Central differences of the full hierarchical loss over every parameter
// coordinate, against the tape gradient. Returns max |a-b|/max(|a|,|b|,1e-8).
struct ParamCheck {
  double max_rel_error = 0.0;
  std::string worst;
  double analytic = 0.0, numeric = 0.0;
};

inline double sample_loss(const Parameters& p, const train::HierSample& s, train::Mode mode) {
  num::Tape tape(false);
  model::BoundParameters b(tape, p, false);
  return train::forward_sample(b, s, mode, p.config.loss_weights).total.value().item();
}

inline ParamCheck check_loss_gradient(const Parameters& p, const train::HierSample& s,
                                      train::Mode mode = train::Mode::kHierarchical, double eps = 1e-3,
                                      num::Stencil stencil = num::Stencil::kFourPoint) {
  Parameters grad = model::zeros_like(p);
  {
    num::Tape tape;
    model::BoundParameters b(tape, p, true);
    const auto losses = train::forward_sample(b, s, mode, p.config.loss_weights);
    tape.backward(losses.total);
    b.accumulate_gradients(grad);
  }
  std::vector<std::pair<std::string, const Tensor*>> grads;
  grad.for_each([&](const std::string& n, const Tensor& t) { grads.emplace_back(n, &t); });
  ParamCheck out;
  Parameters work = p;
  std::size_t k = 0;
  work.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& g = *grads[k++].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      const double num = num::central_difference(
          [&](double h) {
            t[i] = saved + h;
            return sample_loss(work, s, mode);
          },
          eps, stencil);
      t[i] = saved;
      const double err = num::relative_error(g[i], num);
      if (err > out.max_rel_error) out = {err, name + "[" + std::to_string(i) + "]", g[i], num};
    }
  });
  return out;
}

// Plain next-token transformer trainer over concatenated (query, response)
// token sequences. It composes the primitive ops itself and keeps its own
// optimizer state, so it shares no model or training code with the library.
class PlainTrainer {
 public:
  struct Options {
    double lr = 1e-3, weight_decay = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, warmup = 0.03;
    std::int64_t total_steps = 100;
  };

  PlainTrainer(const Parameters& init, Options opt) : opt_(opt), c_(init.config) {
    weights_.push_back(init.embedding);
    for (const auto& l : init.layers) {
      for (const Tensor* t : {&l.attn_gain, &l.wq, &l.wk, &l.wv, &l.wo, &l.ffn_gain, &l.w1, &l.w2})
        weights_.push_back(*t);
    }
    weights_.push_back(init.heads.back());
    for (const auto& w : weights_) {
      m_.push_back(Tensor::zeros(w.shape()));
      v_.push_back(Tensor::zeros(w.shape()));
    }
  }

  // One update on the mean loss of the batch; returns that mean loss.
  double step(const std::vector<std::vector<int>>& seqs, const std::vector<std::size_t>& prompt_lengths) {
    std::vector<Tensor> grad;
    for (const auto& w : weights_) grad.push_back(Tensor::zeros(w.shape()));
    double mean = 0.0;
    const double inv = 1.0 / static_cast<double>(seqs.size());
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      num::Tape tape;
      std::vector<num::Var> w;
      for (const auto& t : weights_) w.push_back(tape.leaf_ref(t, true));
      const num::Var loss = forward(w, seqs[b], prompt_lengths[b]);
      tape.backward(loss);
      mean += loss.value().item() * inv;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const Tensor g = tape.grad(w[k]);
        for (std::size_t i = 0; i < g.size(); ++i) grad[k][i] += inv * g[i];
      }
    }
    ++t_;
    const double lr = schedule(t_);
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      const double decay = weights_[k].rank() == 2 ? opt_.weight_decay : 0.0;
      for (std::size_t i = 0; i < weights_[k].size(); ++i) {
        const double g = grad[k][i];
        m_[k][i] = opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * g;
        v_[k][i] = opt_.beta2 * v_[k][i] + (1.0 - opt_.beta2) * g * g;
        const double upd = (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + opt_.eps);
        weights_[k][i] -= lr * (upd + decay * weights_[k][i]);
      }
    }
    return mean;
  }

 private:
  double schedule(std::int64_t step) const {
    const double total = static_cast<double>(opt_.total_steps);
    const double warm = opt_.warmup * total, s = static_cast<double>(step);
    if (s < warm) return opt_.lr * s / warm;
    if (s >= total) return 0.0;
    return opt_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warm) / (total - warm)));
  }

  num::Var forward(const std::vector<num::Var>& w, const std::vector<int>& seq,
                   std::size_t prompt) const {
    using namespace num;
    const std::size_t n = seq.size(), hd = static_cast<std::size_t>(c_.head_dim());
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    const Mask mask = causal_mask(n);
    Var x = embedding(w[0], seq);
    for (int l = 0; l < c_.num_layers; ++l) {
      const Var* lw = &w[1 + 8 * static_cast<std::size_t>(l)];
      const Var h = rms_norm(x, lw[0]);
      const Var q = rope(matmul(h, lw[1]), pos, hd);
      const Var k = rope(matmul(h, lw[2]), pos, hd);
      const Var v = matmul(h, lw[3]);
      std::vector<Var> heads;
      for (std::size_t c = 0; c < static_cast<std::size_t>(c_.hidden); c += hd) {
        const Var s = scale(matmul_nt(slice_cols(q, c, hd), slice_cols(k, c, hd)),
                            1.0 / std::sqrt(static_cast<double>(hd)));
        heads.push_back(matmul(masked_softmax_rows(s, mask), slice_cols(v, c, hd)));
      }
      x = add(x, matmul(concat_cols(heads), lw[4]));
      x = add(x, matmul(gelu(matmul(rms_norm(x, lw[5]), lw[6])), lw[7]));
    }
    const Var logits = matmul(x, w.back());
    std::vector<int> targets(n, 0);
    std::vector<std::uint8_t> active(n, 0);
    for (std::size_t i = prompt - 1; i + 1 < n; ++i) {
      targets[i] = seq[i + 1];
      active[i] = 1;
    }
    return cross_entropy(logits, targets, active);
  }

  Options opt_;
  ModelConfig c_;
  std::vector<Tensor> weights_, m_, v_;
  std::int64_t t_ = 0;
};

// Finite-difference check of every differentiable op on randomized small shapes.
inline std::vector<std::pair<std::string, num::GradCheckResult>> op_gradient_checks(std::uint64_t seed) {
  using namespace hdlm::num;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(2, 4);
  const auto m = static_cast<std::size_t>(dim(rng)), k = static_cast<std::size_t>(dim(rng)),
             n = static_cast<std::size_t>(dim(rng));
  // A plain sum would hide errors that cancel across coordinates (softmax
  // rows always sum to 1), so push outputs through a nonlinearity first.
  auto reduce = [](Tape&, Var y) { return sum(concat_cols(std::vector<Var>{gelu(y), y})); };
  const std::vector<std::pair<const char*, std::function<num::GradCheckResult()>>> cases = {
      {"matmul",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, matmul(in[0], in[1])); },
                           {random_tensor({m, k}, rng), random_tensor({k, n}, rng)});
       }},
      {"matmul_nt",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, matmul_nt(in[0], in[1])); },
                           {random_tensor({m, k}, rng), random_tensor({n, k}, rng)});
       }},
      {"add",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, add(in[0], in[1])); },
                           {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
       }},
      {"scale",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, scale(in[0], -1.7)); },
                           {random_tensor({m, n}, rng)});
       }},
      {"softmax",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, softmax_rows(in[0])); },
                           {random_tensor({m, n}, rng)});
       }},
      {"masked_softmax",
       [&] {
         return grad_check(
             [&](Tape& t, std::span<const Var> in) { return reduce(t, masked_softmax_rows(in[0], causal_mask(m))); },
             {random_tensor({m, m}, rng)});
       }},
      {"rms_norm",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, rms_norm(in[0], in[1])); },
                           {random_tensor({m, 2 * n}, rng), random_tensor({2 * n}, rng)});
       }},
      {"gelu",
       [&] {
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, gelu(in[0])); },
                           {random_tensor({m, n}, rng)});
       }},
      {"rope",
       [&] {
         std::vector<std::size_t> pos(m);
         for (std::size_t i = 0; i < m; ++i) pos[i] = 3 * i + 1;
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, rope(in[0], pos, 4)); },
                           {random_tensor({m, 8}, rng)});
       }},
      {"slice_concat",
       [&] {
         return grad_check(
             [&](Tape& t, std::span<const Var> in) {
               const Var a = slice_cols(in[0], 1, 2);
               const std::vector<Var> parts{a, in[1]};
               const Var rows = concat_rows(std::vector<Var>{concat_cols(parts), concat_cols(parts)});
               return reduce(t, rows);
             },
             {random_tensor({m, 4}, rng), random_tensor({m, 3}, rng)});
       }},
      {"embedding",
       [&] {
         const std::vector<int> ids{2, 0, 2, 1};
         return grad_check([&](Tape& t, std::span<const Var> in) { return reduce(t, embedding(in[0], ids)); },
                           {random_tensor({4, n}, rng)});
       }},
      {"cross_entropy",
       [&] {
         std::vector<int> targets(m);
         std::vector<std::uint8_t> active(m, 1);
         for (std::size_t i = 0; i < m; ++i) targets[i] = static_cast<int>(i % n);
         active[0] = 0;
         return grad_check(
             [&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], targets, active); },
             {random_tensor({m, n}, rng)});
       }},
  };
  std::vector<std::pair<std::string, GradCheckResult>> out;
  for (const auto& [name, run] : cases) out.emplace_back(name, run());
  return out;
}

}  // namespace hdlm::testing
