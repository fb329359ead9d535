#include "fsdt/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fsdt {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

constexpr double kGeluAlpha = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

Var Graph::push(Tensor value, bool needs_grad,
                std::function<void(Graph&, std::size_t)> backward) {
  if (backward_done_) throw ContractError("graph: cannot extend a graph after backward");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw ContractError("graph: unknown variable");
  return nodes_[v.id];
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::input(Tensor value) { return push(std::move(value), true, nullptr); }

Var Graph::parameter(const Parameter& p) {
  if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
  Var v = push(p.value, true, nullptr);
  params_.emplace(&p, v.id);
  return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  auto [it, inserted] = zero_cache_.try_emplace(v.id, Tensor(n.value.shape()));
  return it->second;
}

const Tensor* Graph::parameter_grad(const Parameter& p) const {
  auto it = params_.find(&p);
  if (it == params_.end()) return nullptr;
  return &grad(Var{it->second});
}

void Graph::backward(Var root) {
  const Node& n = node(root);
  if (n.value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(n.value.shape()));
  }
  backward(root, Tensor::filled(n.value.shape(), 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  const Node& r = node(root);
  if (backward_done_) throw ContractError("graph: backward already ran");
  require_same_shape(r.value, seed, "backward seed");
  backward_done_ = true;
  if (!r.needs_grad) return;
  grad_slot(root.id).accumulate(seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = fsdt::matmul(value(a), value(b));
  const bool ng = needs(a) || needs(b);
  return push(std::move(out), ng, [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    if (g.needs(a)) {
      // dA = dY · Bᵀ
      as_matrix(g.grad_slot(a.id)).noalias() +=
          as_matrix(dy) * as_matrix(g.nodes_[b.id].value).transpose();
    }
    if (g.needs(b)) {
      // dB = Aᵀ · dY
      as_matrix(g.grad_slot(b.id)).noalias() +=
          as_matrix(g.nodes_[a.id].value).transpose() * as_matrix(dy);
    }
  });
}

Var Graph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  out.accumulate(value(b));
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    if (g.needs(a)) g.grad_slot(a.id).accumulate(dy);
    if (g.needs(b)) g.grad_slot(b.id).accumulate(dy);
  });
}

Var Graph::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (bv.size() != xv.cols()) {
    throw ShapeError("add_bias: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return push(std::move(out), needs(x) || needs(bias), [x, bias](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    if (g.needs(x)) g.grad_slot(x.id).accumulate(dy);
    if (g.needs(bias)) {
      Tensor& db = g.grad_slot(bias.id);
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        auto row = dy.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
      }
    }
  });
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    if (g.needs(a)) {
      Tensor& da = g.grad_slot(a.id);
      const Tensor& bv = g.nodes_[b.id].value;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.needs(b)) {
      Tensor& db = g.grad_slot(b.id);
      const Tensor& av = g.nodes_[a.id].value;
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var Graph::scale(Var x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data()) v *= factor;
  return push(std::move(out), needs(x), [x, factor](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    Tensor& dx = g.grad_slot(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  });
}

Var Graph::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  return push(Tensor::scalar(s), needs(x), [x](Graph& g, std::size_t self) {
    const double seed = g.upstream(self)[0];
    for (double& v : g.grad_slot(x.id).data()) v += seed;
  });
}

Var Graph::mean(Var x) {
  const double n = static_cast<double>(value(x).size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = value(x);
  Tensor out = fsdt::layer_norm(xv, value(gamma), value(beta), eps);
  const std::size_t rows = xv.rows();
  const std::size_t n = xv.cols();
  // Keep x̂ and 1/σ per row for the backward pass.
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto xh = xhat.row(r);
    for (std::size_t c = 0; c < n; ++c) xh[c] = (in[c] - mean) * inv_std[r];
  }
  const bool ng = needs(x) || needs(gamma) || needs(beta);
  return push(std::move(out), ng,
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Graph& g, std::size_t self) {
                const Tensor& dy = g.upstream(self);
                const Tensor& gv = g.nodes_[gamma.id].value;
                const std::size_t n = dy.cols();
                if (g.needs(gamma) || g.needs(beta)) {
                  Tensor* dg = g.needs(gamma) ? &g.grad_slot(gamma.id) : nullptr;
                  Tensor* db = g.needs(beta) ? &g.grad_slot(beta.id) : nullptr;
                  for (std::size_t r = 0; r < dy.rows(); ++r) {
                    auto dyr = dy.row(r);
                    auto xh = xhat.row(r);
                    for (std::size_t c = 0; c < n; ++c) {
                      if (dg) (*dg)[c] += dyr[c] * xh[c];
                      if (db) (*db)[c] += dyr[c];
                    }
                  }
                }
                if (g.needs(x)) {
                  Tensor& dx = g.grad_slot(x.id);
                  std::vector<double> dxh(n);
                  for (std::size_t r = 0; r < dy.rows(); ++r) {
                    auto dyr = dy.row(r);
                    auto xh = xhat.row(r);
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      dxh[c] = dyr[c] * gv[c];
                      m1 += dxh[c];
                      m2 += dxh[c] * xh[c];
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    auto dxr = dx.row(r);
                    for (std::size_t c = 0; c < n; ++c) {
                      dxr[c] += inv_std[r] * (dxh[c] - m1 - xh[c] * m2);
                    }
                  }
                }
              });
}

Var Graph::gelu(Var x) {
  Tensor out = fsdt::gelu(value(x));
  return push(std::move(out), needs(x), [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    const Tensor& xv = g.nodes_[x.id].value;
    Tensor& dx = g.grad_slot(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kGeluAlpha * (v + kGeluCubic * v * v * v));
      const double du = kGeluAlpha * (1.0 + 3.0 * kGeluCubic * v * v);
      dx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Var Graph::softmax(Var x) {
  Tensor out = fsdt::softmax(value(x));
  return push(std::move(out), needs(x), [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    const Tensor& y = g.nodes_[self].value;
    Tensor& dx = g.grad_slot(x.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto dyr = dy.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += dyr[c] * yr[c];
      auto dxr = dx.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) dxr[c] += yr[c] * (dyr[c] - dot);
    }
  });
}

Var Graph::causal_attention(Var qkv, std::span<const std::uint8_t> key_mask, std::size_t n_heads,
                            std::size_t seq_len) {
  const Tensor& in = value(qkv);
  if (in.rank() != 2 || in.cols() % 3 != 0) {
    throw ShapeError("causal_attention: qkv must be R×3D, got " + shape_string(in.shape()));
  }
  const std::size_t width = in.cols() / 3;
  if (n_heads == 0 || width % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(width) +
                     " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (seq_len == 0 || in.rows() % seq_len != 0) {
    throw ShapeError("causal_attention: rows " + std::to_string(in.rows()) +
                     " not a multiple of sequence length " + std::to_string(seq_len));
  }
  if (key_mask.size() != in.rows()) {
    throw ShapeError("causal_attention: mask length does not match rows");
  }
  const std::size_t batch = in.rows() / seq_len;
  const std::size_t head_dim = width / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  Tensor out(Shape{in.rows(), width});
  // probs[b][h][i][j]
  std::vector<double> probs(batch * n_heads * seq_len * seq_len, 0.0);
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  std::vector<double> logits(seq_len);

  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t qo = h * head_dim;
      const std::size_t ko = width + h * head_dim;
      const std::size_t vo = 2 * width + h * head_dim;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* q = in.raw() + (base + i) * in.cols() + qo;
        double mx = kNegInf;
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (j > i || !mask[base + j]) {
            logits[j] = kNegInf;
            continue;
          }
          const double* k = in.raw() + (base + j) * in.cols() + ko;
          double s = 0.0;
          for (std::size_t c = 0; c < head_dim; ++c) s += q[c] * k[c];
          logits[j] = s * scale;
          mx = std::max(mx, logits[j]);
        }
        if (mx == kNegInf) continue;  // no admissible key: zero output row
        double* p = probs.data() + ((b * n_heads + h) * seq_len + i) * seq_len;
        double total = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[j] = std::exp(logits[j] - mx);
          total += p[j];
        }
        double* o = out.raw() + (base + i) * width + h * head_dim;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[j] /= total;
          if (p[j] == 0.0) continue;
          const double* v = in.raw() + (base + j) * in.cols() + vo;
          for (std::size_t c = 0; c < head_dim; ++c) o[c] += p[j] * v[c];
        }
      }
    }
  }

  return push(
      std::move(out), needs(qkv),
      [qkv, probs = std::move(probs), batch, n_heads, seq_len, head_dim, width, scale](
          Graph& g, std::size_t self) {
        const Tensor& dy = g.upstream(self);
        const Tensor& in = g.nodes_[qkv.id].value;
        Tensor& dx = g.grad_slot(qkv.id);
        const std::size_t stride = in.cols();
        std::vector<double> dp(seq_len);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * seq_len;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t qo = h * head_dim;
            const std::size_t ko = width + h * head_dim;
            const std::size_t vo = 2 * width + h * head_dim;
            for (std::size_t i = 0; i < seq_len; ++i) {
              const double* p = probs.data() + ((b * n_heads + h) * seq_len + i) * seq_len;
              const double* dyi = dy.raw() + (base + i) * width + h * head_dim;
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                if (p[j] == 0.0) {
                  dp[j] = 0.0;
                  continue;
                }
                const double* v = in.raw() + (base + j) * stride + vo;
                double* dv = dx.raw() + (base + j) * stride + vo;
                double s = 0.0;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  s += dyi[c] * v[c];
                  dv[c] += p[j] * dyi[c];
                }
                dp[j] = s;
                dot += p[j] * s;
              }
              const double* q = in.raw() + (base + i) * stride + qo;
              double* dq = dx.raw() + (base + i) * stride + qo;
              for (std::size_t j = 0; j <= i; ++j) {
                if (p[j] == 0.0) continue;
                const double ds = p[j] * (dp[j] - dot) * scale;
                const double* k = in.raw() + (base + j) * stride + ko;
                double* dk = dx.raw() + (base + j) * stride + ko;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  dq[c] += ds * k[c];
                  dk[c] += ds * q[c];
                }
              }
            }
          }
        }
      });
}

Var Graph::gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = value(x);
  const std::size_t cols = xv.cols();
  Tensor out(Shape{index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range " +
                       std::to_string(xv.rows()));
    }
    auto src = xv.row(index[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return push(std::move(out), needs(x), [x, index = std::move(index)](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    Tensor& dx = g.grad_slot(x.id);
    for (std::size_t r = 0; r < index.size(); ++r) {
      auto src = dy.row(r);
      auto dst = dx.row(index[r]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var Graph::interleave3(Var a, Var b, Var c) {
  const Tensor& av = value(a);
  require_same_shape(av, value(b), "interleave3");
  require_same_shape(av, value(c), "interleave3");
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  Tensor out(Shape{3 * rows, cols});
  const Var parts[3] = {a, b, c};
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor& src = value(parts[j]);
    for (std::size_t r = 0; r < rows; ++r) {
      auto s = src.row(r);
      std::copy(s.begin(), s.end(), out.row(3 * r + j).begin());
    }
  }
  const bool ng = needs(a) || needs(b) || needs(c);
  return push(std::move(out), ng, [a, b, c, rows](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    const Var parts[3] = {a, b, c};
    for (std::size_t j = 0; j < 3; ++j) {
      if (!g.needs(parts[j])) continue;
      Tensor& d = g.grad_slot(parts[j].id);
      for (std::size_t r = 0; r < rows; ++r) {
        auto s = dy.row(3 * r + j);
        auto t = d.row(r);
        for (std::size_t k = 0; k < s.size(); ++k) t[k] += s[k];
      }
    }
  });
}

Var Graph::mask_rows(Var x, std::vector<std::uint8_t> keep) {
  const Tensor& xv = value(x);
  if (keep.size() != xv.rows()) throw ShapeError("mask_rows: mask length does not match rows");
  Tensor out = xv;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    if (!keep[r]) std::fill(out.row(r).begin(), out.row(r).end(), 0.0);
  }
  return push(std::move(out), needs(x), [x, keep = std::move(keep)](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    Tensor& dx = g.grad_slot(x.id);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      if (!keep[r]) continue;
      auto s = dy.row(r);
      auto t = dx.row(r);
      for (std::size_t k = 0; k < s.size(); ++k) t[k] += s[k];
    }
  });
}

Var Graph::gaussian_nll(Var mu, Var log_sigma, Tensor target, double lo, double hi) {
  const Tensor& m = value(mu);
  const Tensor& ls = value(log_sigma);
  require_same_shape(m, ls, "gaussian_nll");
  require_same_shape(m, target, "gaussian_nll target");
  if (m.rows() == 0) throw ShapeError("gaussian_nll: no rows");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double inv_rows = 1.0 / static_cast<double>(m.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double l = std::clamp(ls[i], lo, hi);
    const double sigma = std::exp(l);
    const double z = (target[i] - m[i]) / sigma;
    total += l + 0.5 * z * z + half_log_2pi;
  }
  return push(Tensor::scalar(total * inv_rows), needs(mu) || needs(log_sigma),
              [mu, log_sigma, target = std::move(target), lo, hi, inv_rows](Graph& g,
                                                                            std::size_t self) {
                const double seed = g.upstream(self)[0] * inv_rows;
                const Tensor& m = g.nodes_[mu.id].value;
                const Tensor& ls = g.nodes_[log_sigma.id].value;
                Tensor* dm = g.needs(mu) ? &g.grad_slot(mu.id) : nullptr;
                Tensor* dl = g.needs(log_sigma) ? &g.grad_slot(log_sigma.id) : nullptr;
                for (std::size_t i = 0; i < m.size(); ++i) {
                  const double l = std::clamp(ls[i], lo, hi);
                  const double inv_var = std::exp(-2.0 * l);
                  const double diff = target[i] - m[i];
                  if (dm) (*dm)[i] += -seed * diff * inv_var;
                  if (dl && ls[i] > lo && ls[i] < hi) {
                    (*dl)[i] += seed * (1.0 - diff * diff * inv_var);
                  }
                }
              });
}

}  // namespace fsdt
