#include "hdlm/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hdlm/errors.hpp"

namespace hdlm::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap as_mat(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw UsageError("operands recorded on different tapes");
  return t;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

Mask causal_mask(std::size_t queries, std::size_t offset) {
  Mask m{queries, offset + queries, {}};
  m.allow.assign(m.rows * m.cols, 0);
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = 0; j <= offset + i; ++j) m.allow[i * m.cols + j] = 1;
  }
  return m;
}

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("value() of an empty Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw UsageError("Var is not recorded on this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad && record_, nullptr);
}

Var Tape::leaf_ref(const Tensor& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id()].get();
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id()].requires_grad;
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor::zeros(n.get().shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.get().shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || loss.id() >= nodes_.size()) {
    throw UsageError("backward: loss is not recorded on this tape");
  }
  if (nodes_[loss.id()].get().size() != 1) {
    throw UsageError("backward: loss must be a scalar, got " +
                     shape_string(nodes_[loss.id()].get().shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::count_matmul(OpCategory category, std::uint64_t flops_forward, std::uint64_t flops_backward) {
  if (!counter_) return;
  const auto c = static_cast<std::size_t>(category);
  counter_->forward[c] += flops_forward;
  counter_->backward[c] += flops_backward;
}

void Tape::count_excluded(std::uint64_t forward, std::uint64_t backward) {
  if (!counter_) return;
  counter_->excluded_forward += forward;
  counter_->excluded_backward += backward;
}

// ---------------------------------------------------------------- kernels

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_mat(out).noalias() = as_mat(a) * as_mat(b);
  return out;
}

void rope_rotate(std::span<double> row, std::size_t position, std::size_t head_dim, bool inverse) {
  const std::size_t half = head_dim / 2;
  const double pos = static_cast<double>(position);
  for (std::size_t h = 0; h + head_dim <= row.size(); h += head_dim) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = pos * freq;
      const double c = std::cos(angle);
      const double s = inverse ? -std::sin(angle) : std::sin(angle);
      double& x0 = row[h + 2 * i];
      double& x1 = row[h + 2 * i + 1];
      const double r0 = x0 * c - x1 * s;
      const double r1 = x0 * s + x1 * c;
      x0 = r0;
      x1 = r1;
    }
  }
}

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = matmul_kernel(a.value(), b.value());
  const std::uint64_t f = 2 * u64(a.value().rows()) * u64(a.value().cols()) * u64(b.value().cols());
  const bool ga = a.requires_grad();
  const bool gb = b.requires_grad();
  const OpCategory cat = t.category();
  t.count_matmul(cat, f, 0);
  const auto ia = a.id();
  const auto ib = b.id();
  return t.push(std::move(out), ga || gb, [ia, ib, ga, gb, f, cat](Tape& tp, const Tensor& g) {
    tp.count_matmul(cat, 0, f * ((ga ? 1 : 0) + (gb ? 1 : 0)));
    const Tensor& av = tp.value(Var(&tp, ia));
    const Tensor& bv = tp.value(Var(&tp, ib));
    if (ga) as_mat(tp.grad_buffer(ia)).noalias() += as_mat(g) * as_mat(bv).transpose();
    if (gb) as_mat(tp.grad_buffer(ib)).noalias() += as_mat(av).transpose() * as_mat(g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt inner dimensions " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()) + "^T");
  }
  Tensor out({av.rows(), bv.rows()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  const std::uint64_t f = 2 * u64(av.rows()) * u64(av.cols()) * u64(bv.rows());
  const bool ga = a.requires_grad();
  const bool gb = b.requires_grad();
  const OpCategory cat = t.category();
  t.count_matmul(cat, f, 0);
  const auto ia = a.id();
  const auto ib = b.id();
  return t.push(std::move(out), ga || gb, [ia, ib, ga, gb, f, cat](Tape& tp, const Tensor& g) {
    tp.count_matmul(cat, 0, f * ((ga ? 1 : 0) + (gb ? 1 : 0)));
    const Tensor& a2 = tp.value(Var(&tp, ia));
    const Tensor& b2 = tp.value(Var(&tp, ib));
    if (ga) as_mat(tp.grad_buffer(ia)).noalias() += as_mat(g) * as_mat(b2);
    if (gb) as_mat(tp.grad_buffer(ib)).noalias() += as_mat(g).transpose() * as_mat(a2);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id();
  const auto ib = b.id();
  const bool ga = a.requires_grad();
  const bool gb = b.requires_grad();
  return t.push(std::move(out), ga || gb, [ia, ib, ga, gb](Tape& tp, const Tensor& g) {
    if (ga) accumulate(tp.grad_buffer(ia), g);
    if (gb) accumulate(tp.grad_buffer(ib), g);
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const auto ia = a.id();
  return t.push(std::move(out), a.requires_grad(), [ia, s](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id();
  return t.push(Tensor::scalar(s), a.requires_grad(), [ia](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(ia);
    for (auto& v : ga.data()) v += g[0];
  });
}

namespace {

Var softmax_impl(Var x, const Mask* mask) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "softmax_rows");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (mask && (mask->rows != m || mask->cols != n)) {
    throw DimensionError("mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         " for scores " + shape_string(xv.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask || (*mask)(i, j)) mx = std::max(mx, xv.at(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw UsageError("softmax row " + std::to_string(i) + " has no admissible entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = (!mask || (*mask)(i, j)) ? std::exp(xv.at(i, j) - mx) : 0.0;
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  t.count_excluded(3 * u64(m) * u64(n), 3 * u64(m) * u64(n));
  const auto ix = x.id();
  const auto iy = static_cast<std::uint32_t>(t.size());
  return t.push(std::move(out), x.requires_grad(), [ix, iy](Tape& tp, const Tensor& g) {
    const Tensor& p = tp.value(Var(&tp, iy));
    Tensor& gx = tp.grad_buffer(ix);
    const std::size_t rows = p.rows();
    const std::size_t cols = p.cols();
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g.at(i, j) * p.at(i, j);
      for (std::size_t j = 0; j < cols; ++j) gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var masked_softmax_rows(Var x, const Mask& mask) { return softmax_impl(x, &mask); }

Var rms_norm(Var x, Var gain, double eps) {
  Tape& t = tape_of(x, gain);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const std::size_t e = xv.cols();
  if (e == 0) throw DimensionError("rms_norm over an empty feature axis");
  if (gv.size() != e) {
    throw DimensionError("rms_norm gain " + shape_string(gv.shape()) + " for input " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  Tensor out(xv.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double ms = 0.0;
    for (double v : xr) ms += v * v;
    ms /= static_cast<double>(e);
    inv[r] = 1.0 / std::sqrt(ms + eps);
    auto yr = out.row(r);
    for (std::size_t j = 0; j < e; ++j) yr[j] = xr[j] * inv[r] * gv[j];
  }
  t.count_excluded(4 * u64(rows) * u64(e), 8 * u64(rows) * u64(e));
  const auto ix = x.id();
  const auto ig = gain.id();
  const bool gx_req = x.requires_grad();
  const bool gg_req = gain.requires_grad();
  return t.push(std::move(out), gx_req || gg_req,
                [ix, ig, gx_req, gg_req, inv = std::move(inv)](Tape& tp, const Tensor& g) {
                  const Tensor& x2 = tp.value(Var(&tp, ix));
                  const Tensor& g2 = tp.value(Var(&tp, ig));
                  const std::size_t cols = x2.cols();
                  const double n = static_cast<double>(cols);
                  for (std::size_t r = 0; r < x2.rows(); ++r) {
                    auto xr = x2.row(r);
                    auto dy = g.row(r);
                    const double s = inv[r];
                    if (gg_req) {
                      auto dg = tp.grad_buffer(ig).data();
                      for (std::size_t j = 0; j < cols; ++j) dg[j] += dy[j] * xr[j] * s;
                    }
                    if (gx_req) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * g2[j] * xr[j];
                      auto dx = tp.grad_buffer(ix).row(r);
                      const double s3 = s * s * s / n;
                      for (std::size_t j = 0; j < cols; ++j) dx[j] += s * g2[j] * dy[j] - s3 * xr[j] * dot;
                    }
                  }
                });
}

Var gelu(Var x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  t.count_excluded(4 * u64(out.size()), 6 * u64(out.size()));
  const auto ix = x.id();
  return t.push(std::move(out), x.requires_grad(), [ix](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(Var(&tp, ix));
    Tensor& gx = tp.grad_buffer(ix);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var rope(Var x, std::span<const std::size_t> positions, std::size_t head_dim) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "rope");
  if (head_dim == 0 || head_dim % 2 != 0 || xv.cols() % head_dim != 0) {
    throw DimensionError("rope head_dim " + std::to_string(head_dim) + " for width " +
                         std::to_string(xv.cols()));
  }
  if (positions.size() != xv.rows()) {
    throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(xv.rows()) + " rows");
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) rope_rotate(out.row(r), positions[r], head_dim, false);
  t.count_excluded(6 * u64(out.size()), 6 * u64(out.size()));
  const auto ix = x.id();
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return t.push(std::move(out), x.requires_grad(),
                [ix, head_dim, pos = std::move(pos)](Tape& tp, const Tensor& g) {
                  Tensor back = g;
                  for (std::size_t r = 0; r < back.rows(); ++r) rope_rotate(back.row(r), pos[r], head_dim, true);
                  accumulate(tp.grad_buffer(ix), back);
                });
}

Var slice_cols(Var x, std::size_t start, std::size_t width) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "slice_cols");
  if (start + width > xv.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + width) +
                         ") of " + shape_string(xv.shape()));
  }
  Tensor out({xv.rows(), width});
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    std::copy_n(xv.row(r).begin() + static_cast<std::ptrdiff_t>(start), width, out.row(r).begin());
  }
  const auto ix = x.id();
  return t.push(std::move(out), x.requires_grad(), [ix, start, width](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto dst = gx.row(r);
      auto src = g.row(r);
      for (std::size_t j = 0; j < width; ++j) dst[start + j] += src[j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  bool req = false;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    tape_of(parts[0], p);
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += p.value().cols();
    req = req || p.requires_grad();
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += v.cols();
  }
  return t.push(std::move(out), req, [ids, widths](Tape& tp, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(Var(&tp, ids[k]))) {
        Tensor& gp = tp.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r);
          auto dst = gp.row(r);
          for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[o + j];
        }
      }
      o += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  bool req = false;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> sizes;
  for (Var p : parts) {
    tape_of(parts[0], p);
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != cols) throw DimensionError("concat_rows column mismatch");
    rows += p.value().rows();
    req = req || p.requires_grad();
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return t.push(Tensor({rows, cols}, std::move(data)), req, [ids, sizes](Tape& tp, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(Var(&tp, ids[k]))) {
        auto dst = tp.grad_buffer(ids[k]).data();
        for (std::size_t i = 0; i < sizes[k]; ++i) dst[i] += g[o + i];
      }
      o += sizes[k];
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  require_rank2(tv, "embedding");
  const std::size_t vocab = tv.rows();
  const std::size_t width = tv.cols();
  Tensor out({ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw VocabularyError("token id " + std::to_string(ids[r]) + " outside [0," +
                            std::to_string(vocab) + ")");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const auto it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push(std::move(out), table.requires_grad(), [it, idv = std::move(idv)](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad_buffer(it);
    for (std::size_t r = 0; r < idv.size(); ++r) {
      auto dst = gt.row(static_cast<std::size_t>(idv[r]));
      auto src = g.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> active) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  require_rank2(lv, "cross_entropy");
  const std::size_t rows = lv.rows();
  const std::size_t vocab = lv.cols();
  if (targets.size() != rows || active.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(active.size()) + " mask entries for " + std::to_string(rows) +
                         " rows");
  }
  std::size_t n_active = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!active[r]) continue;
    ++n_active;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw VocabularyError("target id " + std::to_string(targets[r]) + " outside [0," +
                            std::to_string(vocab) + ")");
    }
  }
  if (n_active == 0) throw DataError("cross_entropy: degenerate batch, no active positions");

  Tensor probs({rows, vocab});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!active[r]) continue;
    auto x = lv.row(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (double v : x) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    total += lse - x[static_cast<std::size_t>(targets[r])];
    auto p = probs.row(r);
    for (std::size_t j = 0; j < vocab; ++j) p[j] = std::exp(x[j] - lse);
  }
  const double inv_n = 1.0 / static_cast<double>(n_active);
  t.count_excluded(3 * u64(n_active) * u64(vocab), 2 * u64(n_active) * u64(vocab));
  const auto il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> ac(active.begin(), active.end());
  return t.push(Tensor::scalar(total * inv_n), logits.requires_grad(),
                [il, inv_n, probs = std::move(probs), tg = std::move(tg), ac = std::move(ac)](
                    Tape& tp, const Tensor& g) {
                  Tensor& gl = tp.grad_buffer(il);
                  const double s = g[0] * inv_n;
                  for (std::size_t r = 0; r < tg.size(); ++r) {
                    if (!ac[r]) continue;
                    auto dst = gl.row(r);
                    auto p = probs.row(r);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * p[j];
                    dst[static_cast<std::size_t>(tg[r])] -= s;
                  }
                });
}

Var detach(Var x) {
  Tape& t = tape_of(x);
  return t.leaf(x.value(), false);
}

}  // namespace hdlm::num
