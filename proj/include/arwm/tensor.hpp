// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor math with reverse-mode differentiation.
// Tensors are row-major, value-semantic handles onto shared nodes; ops build
// an acyclic graph whose backward closures accumulate into .grad buffers.
// The whole module is templated on the scalar type: float for training,
// double for gradient verification.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "arwm/rng.hpp"

namespace arwm {

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : ContractError {
  explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void check_dims(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Raw GEMM kernels. Accumulation order is fixed so results are deterministic
// and independent of how callers batch their work.
// ---------------------------------------------------------------------------

// C(m,n) += A(m,k) * B(k,n)
template <class R>
void gemm_nn(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
  for (int64_t i = 0; i < m; ++i) {
    R* c = C + i * n;
    const R* a = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const R av = a[p];
      const R* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C(m,n) += A(m,k) * B(n,k)^T
template <class R>
void gemm_nt(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
  for (int64_t i = 0; i < m; ++i) {
    const R* a = A + i * k;
    R* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const R* b = B + j * k;
      R acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C(m,n) += A(k,m)^T * B(k,n)
template <class R>
void gemm_tn(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
  for (int64_t p = 0; p < k; ++p) {
    const R* a = A + p * m;
    const R* b = B + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const R av = a[i];
      R* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Graph node and tensor handle
// ---------------------------------------------------------------------------

// Graph recording can be suspended for inference-only forwards.
inline bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(autograd_enabled()) { autograd_enabled() = false; }
  ~NoGradGuard() { autograd_enabled() = prev; }
};

template <class R>
struct NodeT {
  Shape shape;
  std::vector<R> value;
  std::vector<R> grad;  // sized lazily, same shape as value
  bool requires_grad = false;
  bool backward_ran = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backprop;  // pushes grad into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), R(0));
  }
};

template <class R>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(const Shape& shape, bool requires_grad = false) {
    TensorT t;
    t.n_ = std::make_shared<NodeT<R>>();
    t.n_->shape = shape;
    t.n_->value.assign(numel_of(shape), R(0));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_data(const Shape& shape, std::vector<R> data,
                           bool requires_grad = false) {
    check_dims(numel_of(shape) == static_cast<int64_t>(data.size()),
               "tensor data size does not match shape");
    TensorT t;
    t.n_ = std::make_shared<NodeT<R>>();
    t.n_->shape = shape;
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(R v) { return from_data({1}, {v}); }

  static TensorT randn(const Shape& shape, Rng& rng, R stddev = R(1),
                       bool requires_grad = false) {
    TensorT t = zeros(shape, requires_grad);
    for (auto& v : t.n_->value) v = static_cast<R>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }

  std::vector<R>& data() { return n_->value; }
  const std::vector<R>& data() const { return n_->value; }
  std::vector<R>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<R>& grad() const { return n_->grad; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  R item() const {
    check(numel() == 1, "item() requires a scalar tensor");
    return n_->value[0];
  }

  NodeT<R>* node() const { return n_.get(); }
  std::shared_ptr<NodeT<R>> node_ptr() const { return n_; }

  // A detached copy sharing no graph history.
  TensorT detach() const {
    TensorT t = from_data(shape(), data());
    return t;
  }

  bool has_nan() const {
    for (R v : n_->value)
      if (std::isnan(static_cast<double>(v)) ||
          std::isinf(static_cast<double>(v)))
        return true;
    return false;
  }

  // -- graph construction helper ------------------------------------------
  static TensorT make_op(const Shape& shape,
                         std::vector<TensorT> parents,
                         std::function<void(NodeT<R>&)> backprop) {
    TensorT t = zeros(shape);
    bool needs = false;
    if (autograd_enabled())
      for (const auto& p : parents) needs = needs || p.requires_grad();
    t.n_->requires_grad = needs;
    if (needs) {
      for (auto& p : parents) t.n_->parents.push_back(p.n_);
      t.n_->backprop = std::move(backprop);
    }
    return t;
  }

 private:
  std::shared_ptr<NodeT<R>> n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <class R>
TensorT<R> matmul(const TensorT<R>& a, const TensorT<R>& b) {
  check_dims(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  check_dims(b.dim(0) == k, "matmul inner dimensions disagree");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  TensorT<R> out = TensorT<R>::make_op(
      {m, n}, {a, b}, [an, bn, m, k, n](NodeT<R>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          gemm_nt<R>(m, n, k, o.grad.data(), bn->value.data(),
                     an->grad.data());
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          gemm_tn<R>(k, m, n, an->value.data(), o.grad.data(),
                     bn->grad.data());
        }
      });
  gemm_nn<R>(m, k, n, a.data().data(), b.data().data(), out.data().data());
  return out;
}

template <class R>
TensorT<R> add(const TensorT<R>& a, const TensorT<R>& b) {
  check_dims(a.shape() == b.shape(), "add shape mismatch");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op(a.shape(), {a, b}, [an, bn](NodeT<R>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
      });
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <class R>
TensorT<R> sub(const TensorT<R>& a, const TensorT<R>& b) {
  check_dims(a.shape() == b.shape(), "sub shape mismatch");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op(a.shape(), {a, b}, [an, bn](NodeT<R>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
      });
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

template <class R>
TensorT<R> mul(const TensorT<R>& a, const TensorT<R>& b) {
  check_dims(a.shape() == b.shape(), "mul shape mismatch");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op(a.shape(), {a, b}, [an, bn](NodeT<R>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i)
            an->grad[i] += o.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i)
            bn->grad[i] += o.grad[i] * an->value[i];
        }
      });
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <class R>
TensorT<R> scale(const TensorT<R>& a, R c) {
  auto an = a.node_ptr();
  TensorT<R> out = TensorT<R>::make_op(a.shape(), {a}, [an, c](NodeT<R>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += c * o.grad[i];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = c * a.data()[i];
  return out;
}

// x: (L, d), bias: (d) broadcast over rows.
template <class R>
TensorT<R> add_bias(const TensorT<R>& x, const TensorT<R>& bias) {
  check_dims(x.rank() == 2 && bias.rank() == 1 && x.dim(1) == bias.dim(0),
             "add_bias expects (L,d) plus (d)");
  const int64_t L = x.dim(0), d = x.dim(1);
  auto xn = x.node_ptr();
  auto bn = bias.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op(x.shape(), {x, bias}, [xn, bn, L, d](NodeT<R>& o) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < d; ++j) bn->grad[j] += o.grad[i * d + j];
        }
      });
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + j] + bias.data()[j];
  return out;
}

template <class R>
TensorT<R> linear(const TensorT<R>& x, const TensorT<R>& w,
                  const TensorT<R>& b) {
  return add_bias(matmul(x, w), b);
}

// tanh-approximated GELU
template <class R>
TensorT<R> gelu(const TensorT<R>& x) {
  auto xn = x.node_ptr();
  TensorT<R> out = TensorT<R>::make_op(x.shape(), {x}, [xn](NodeT<R>& o) {
    xn->ensure_grad();
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    for (size_t i = 0; i < o.grad.size(); ++i) {
      const double v = static_cast<double>(xn->value[i]);
      const double u = kC * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * 0.044715 * v * v);
      const double g = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      xn->grad[i] += o.grad[i] * static_cast<R>(g);
    }
  });
  constexpr double kC = 0.7978845608028654;
  for (size_t i = 0; i < out.data().size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out.data()[i] =
        static_cast<R>(0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v))));
  }
  return out;
}

// Row-wise layer norm with learned gain/bias: x (L,d), g,b (d).
template <class R>
TensorT<R> layernorm(const TensorT<R>& x, const TensorT<R>& g,
                     const TensorT<R>& b, R eps = R(1e-5)) {
  check_dims(x.rank() == 2 && g.rank() == 1 && b.rank() == 1 &&
                 x.dim(1) == g.dim(0) && x.dim(1) == b.dim(0),
             "layernorm shapes");
  const int64_t L = x.dim(0), d = x.dim(1);
  auto xn = x.node_ptr();
  auto gn = g.node_ptr();
  auto bn = b.node_ptr();
  // cache per-row mean and inverse std for the backward pass
  auto stats = std::make_shared<std::vector<R>>(2 * L);
  TensorT<R> out = TensorT<R>::make_op(
      x.shape(), {x, g, b}, [xn, gn, bn, stats, L, d](NodeT<R>& o) {
        for (int64_t i = 0; i < L; ++i) {
          const R mu = (*stats)[2 * i];
          const R istd = (*stats)[2 * i + 1];
          const R* xr = xn->value.data() + i * d;
          const R* go = o.grad.data() + i * d;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int64_t j = 0; j < d; ++j)
              gn->grad[j] += go[j] * (xr[j] - mu) * istd;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t j = 0; j < d; ++j) bn->grad[j] += go[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            R sum_gy = 0, sum_gyx = 0;
            for (int64_t j = 0; j < d; ++j) {
              const R gy = go[j] * gn->value[j];
              sum_gy += gy;
              sum_gyx += gy * (xr[j] - mu) * istd;
            }
            R* xg = xn->grad.data() + i * d;
            for (int64_t j = 0; j < d; ++j) {
              const R gy = go[j] * gn->value[j];
              const R xh = (xr[j] - mu) * istd;
              xg[j] += istd * (gy - sum_gy / R(d) - xh * sum_gyx / R(d));
            }
          }
        }
      });
  for (int64_t i = 0; i < L; ++i) {
    const R* xr = x.data().data() + i * d;
    R mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= R(d);
    R var = 0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= R(d);
    const R istd = R(1) / std::sqrt(var + eps);
    (*stats)[2 * i] = mu;
    (*stats)[2 * i + 1] = istd;
    R* orow = out.data().data() + i * d;
    for (int64_t j = 0; j < d; ++j)
      orow[j] = (xr[j] - mu) * istd * g.data()[j] + b.data()[j];
  }
  return out;
}

// Boolean attention mask; allow[i*cols + j] nonzero means query i may read key j.
struct MaskMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<uint8_t> allow;

  static MaskMatrix full(int64_t r, int64_t c, bool open = true) {
    MaskMatrix m;
    m.rows = r;
    m.cols = c;
    m.allow.assign(static_cast<size_t>(r * c), open ? 1 : 0);
    return m;
  }
  uint8_t at(int64_t i, int64_t j) const { return allow[i * cols + j]; }
  void set(int64_t i, int64_t j, bool v) { allow[i * cols + j] = v ? 1 : 0; }
};

// Count of fully masked softmax rows seen since the last reset; those rows
// produce zero output rather than NaN.
inline int64_t& attention_all_masked_rows() {
  thread_local int64_t n = 0;
  return n;
}

// Multi-head scaled dot-product attention over row-major (L, d) streams.
// Head h occupies columns [h*dh, (h+1)*dh). Softmax weights per query row
// sum to 1 over unmasked keys.
template <class R>
TensorT<R> softmax_attention(const TensorT<R>& q, const TensorT<R>& k,
                             const TensorT<R>& v, const MaskMatrix& mask,
                             int n_heads = 1) {
  check_dims(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
             "attention expects rank-2 q,k,v");
  const int64_t Lq = q.dim(0), d = q.dim(1), Lk = k.dim(0);
  check_dims(k.dim(1) == d && v.dim(1) == d && v.dim(0) == Lk,
             "attention q/k/v dims disagree");
  check_dims(mask.rows == Lq && mask.cols == Lk, "attention mask shape");
  check_dims(d % n_heads == 0, "head count must divide width");
  const int64_t dh = d / n_heads;
  const R inv_sqrt = R(1) / std::sqrt(static_cast<R>(dh));

  auto qn = q.node_ptr();
  auto kn = k.node_ptr();
  auto vn = v.node_ptr();
  // softmax weights cached for backward: n_heads * Lq * Lk
  auto probs = std::make_shared<std::vector<R>>(
      static_cast<size_t>(n_heads) * Lq * Lk, R(0));
  auto mask_copy = std::make_shared<MaskMatrix>(mask);

  TensorT<R> out = TensorT<R>::make_op(
      {Lq, d}, {q, k, v},
      [qn, kn, vn, probs, mask_copy, Lq, Lk, d, dh, n_heads,
       inv_sqrt](NodeT<R>& o) {
        std::vector<R> dp(static_cast<size_t>(Lk));
        for (int h = 0; h < n_heads; ++h) {
          const int64_t c0 = h * dh;
          const R* P = probs->data() + static_cast<size_t>(h) * Lq * Lk;
          for (int64_t i = 0; i < Lq; ++i) {
            const R* go = o.grad.data() + i * d + c0;
            const R* prow = P + i * Lk;
            // dP = dO . V^T, restricted to allowed keys
            R dot_pp = 0;
            for (int64_t j = 0; j < Lk; ++j) {
              if (!mask_copy->at(i, j)) {
                dp[j] = 0;
                continue;
              }
              const R* vr = vn->value.data() + j * d + c0;
              R acc = 0;
              for (int64_t t = 0; t < dh; ++t) acc += go[t] * vr[t];
              dp[j] = acc;
              dot_pp += acc * prow[j];
            }
            for (int64_t j = 0; j < Lk; ++j) {
              if (!mask_copy->at(i, j)) continue;
              const R p = prow[j];
              if (vn->requires_grad) {
                vn->ensure_grad();
                R* vg = vn->grad.data() + j * d + c0;
                for (int64_t t = 0; t < dh; ++t) vg[t] += p * go[t];
              }
              const R ds = p * (dp[j] - dot_pp) * inv_sqrt;
              if (qn->requires_grad) {
                qn->ensure_grad();
                R* qg = qn->grad.data() + i * d + c0;
                const R* kr = kn->value.data() + j * d + c0;
                for (int64_t t = 0; t < dh; ++t) qg[t] += ds * kr[t];
              }
              if (kn->requires_grad) {
                kn->ensure_grad();
                R* kg = kn->grad.data() + j * d + c0;
                const R* qr = qn->value.data() + i * d + c0;
                for (int64_t t = 0; t < dh; ++t) kg[t] += ds * qr[t];
              }
            }
          }
        }
      });

  std::vector<R> scores(static_cast<size_t>(Lk));
  for (int h = 0; h < n_heads; ++h) {
    const int64_t c0 = h * dh;
    R* P = probs->data() + static_cast<size_t>(h) * Lq * Lk;
    for (int64_t i = 0; i < Lq; ++i) {
      const R* qr = q.data().data() + i * d + c0;
      R maxs = -std::numeric_limits<R>::infinity();
      bool any = false;
      for (int64_t j = 0; j < Lk; ++j) {
        if (!mask.at(i, j)) continue;
        const R* kr = k.data().data() + j * d + c0;
        R acc = 0;
        for (int64_t t = 0; t < dh; ++t) acc += qr[t] * kr[t];
        acc *= inv_sqrt;
        scores[j] = acc;
        maxs = std::max(maxs, acc);
        any = true;
      }
      R* orow = out.data().data() + i * d + c0;
      if (!any) {
        if (h == 0) ++attention_all_masked_rows();
        continue;  // output stays zero for fully masked rows
      }
      R z = 0;
      R* prow = P + i * Lk;
      for (int64_t j = 0; j < Lk; ++j) {
        if (!mask.at(i, j)) continue;
        const R e = std::exp(scores[j] - maxs);
        prow[j] = e;
        z += e;
      }
      const R iz = R(1) / z;
      for (int64_t j = 0; j < Lk; ++j) {
        if (!mask.at(i, j)) continue;
        prow[j] *= iz;
        const R p = prow[j];
        const R* vr = v.data().data() + j * d + c0;
        for (int64_t t = 0; t < dh; ++t) orow[t] += p * vr[t];
      }
    }
  }
  return out;
}

// Gather rows of x (L,d) by index; reused both for slot selection and for
// embedding-table lookups.
template <class R>
TensorT<R> row_gather(const TensorT<R>& x, const std::vector<int64_t>& idx) {
  check_dims(x.rank() == 2, "row_gather expects rank-2");
  const int64_t d = x.dim(1), L = x.dim(0);
  for (int64_t i : idx) check_dims(i >= 0 && i < L, "row_gather index range");
  auto xn = x.node_ptr();
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  TensorT<R> out = TensorT<R>::make_op(
      {static_cast<int64_t>(idx.size()), d}, {x},
      [xn, idx_copy, d](NodeT<R>& o) {
        xn->ensure_grad();
        for (size_t r = 0; r < idx_copy->size(); ++r) {
          const int64_t src = (*idx_copy)[r];
          for (int64_t j = 0; j < d; ++j)
            xn->grad[src * d + j] += o.grad[r * d + j];
        }
      });
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.data().data() + idx[r] * d, d,
                out.data().data() + static_cast<int64_t>(r) * d);
  return out;
}

// Scatter rows of x (n,d) into a zero (L,d) tensor at the given indices.
template <class R>
TensorT<R> row_scatter(const TensorT<R>& x, const std::vector<int64_t>& idx,
                       int64_t L) {
  check_dims(x.rank() == 2, "row_scatter expects rank-2");
  check_dims(static_cast<int64_t>(idx.size()) == x.dim(0),
             "row_scatter index count");
  const int64_t d = x.dim(1);
  for (int64_t i : idx) check_dims(i >= 0 && i < L, "row_scatter index range");
  auto xn = x.node_ptr();
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  TensorT<R> out = TensorT<R>::make_op(
      {L, d}, {x}, [xn, idx_copy, d](NodeT<R>& o) {
        xn->ensure_grad();
        for (size_t r = 0; r < idx_copy->size(); ++r) {
          const int64_t dst = (*idx_copy)[r];
          for (int64_t j = 0; j < d; ++j)
            xn->grad[r * d + j] += o.grad[dst * d + j];
        }
      });
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.data().data() + static_cast<int64_t>(r) * d, d,
                out.data().data() + idx[r] * d);
  return out;
}

// out[i,:] = x[i,:] * c[i]; c has shape (L, 1).
template <class R>
TensorT<R> scale_rows(const TensorT<R>& x, const TensorT<R>& c) {
  check_dims(x.rank() == 2 && c.rank() == 2 && c.dim(1) == 1 &&
                 c.dim(0) == x.dim(0),
             "scale_rows expects (L,d) and (L,1)");
  const int64_t L = x.dim(0), d = x.dim(1);
  auto xn = x.node_ptr();
  auto cn = c.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op(x.shape(), {x, c}, [xn, cn, L, d](NodeT<R>& o) {
        for (int64_t i = 0; i < L; ++i) {
          const R ci = cn->value[i];
          if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t j = 0; j < d; ++j)
              xn->grad[i * d + j] += o.grad[i * d + j] * ci;
          }
          if (cn->requires_grad) {
            cn->ensure_grad();
            R acc = 0;
            for (int64_t j = 0; j < d; ++j)
              acc += o.grad[i * d + j] * xn->value[i * d + j];
            cn->grad[i] += acc;
          }
        }
      });
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + j] * c.data()[i];
  return out;
}

template <class R>
TensorT<R> sum(const TensorT<R>& x) {
  auto xn = x.node_ptr();
  TensorT<R> out = TensorT<R>::make_op({1}, {x}, [xn](NodeT<R>& o) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += o.grad[0];
  });
  R acc = 0;
  for (R v : x.data()) acc += v;
  out.data()[0] = acc;
  return out;
}

// Mean squared error over all elements.
template <class R>
TensorT<R> mse(const TensorT<R>& pred, const TensorT<R>& target) {
  check_dims(pred.shape() == target.shape(), "mse shape mismatch");
  check(pred.numel() > 0, "mse over empty tensor");
  const R inv_n = R(1) / static_cast<R>(pred.numel());
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op({1}, {pred, target}, [pn, tn, inv_n](NodeT<R>& o) {
        const R c = R(2) * inv_n * o.grad[0];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (size_t i = 0; i < pn->value.size(); ++i)
            pn->grad[i] += c * (pn->value[i] - tn->value[i]);
        }
        if (tn->requires_grad) {
          tn->ensure_grad();
          for (size_t i = 0; i < tn->value.size(); ++i)
            tn->grad[i] -= c * (pn->value[i] - tn->value[i]);
        }
      });
  R acc = 0;
  for (size_t i = 0; i < pred.data().size(); ++i) {
    const R dlt = pred.data()[i] - target.data()[i];
    acc += dlt * dlt;
  }
  out.data()[0] = acc * inv_n;
  return out;
}

// Sum of squared errors (no normalization); composes exactly across packing.
template <class R>
TensorT<R> sum_sq_error(const TensorT<R>& pred, const TensorT<R>& target) {
  check_dims(pred.shape() == target.shape(), "sse shape mismatch");
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  TensorT<R> out =
      TensorT<R>::make_op({1}, {pred, target}, [pn, tn](NodeT<R>& o) {
        const R c = R(2) * o.grad[0];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (size_t i = 0; i < pn->value.size(); ++i)
            pn->grad[i] += c * (pn->value[i] - tn->value[i]);
        }
        if (tn->requires_grad) {
          tn->ensure_grad();
          for (size_t i = 0; i < tn->value.size(); ++i)
            tn->grad[i] -= c * (pn->value[i] - tn->value[i]);
        }
      });
  R acc = 0;
  for (size_t i = 0; i < pred.data().size(); ++i) {
    const R dlt = pred.data()[i] - target.data()[i];
    acc += dlt * dlt;
  }
  out.data()[0] = acc;
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode sweep
// ---------------------------------------------------------------------------

template <class R>
std::vector<NodeT<R>*> topo_order(NodeT<R>* root) {
  std::vector<NodeT<R>*> order;
  std::unordered_set<NodeT<R>*> seen;
  std::vector<std::pair<NodeT<R>*, size_t>> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<R>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

// Populate gradients of every reachable tensor with requires_grad.
// A second call on the same loss without rebuilding the graph is an error.
template <class R>
void backward(const TensorT<R>& loss) {
  check(loss.numel() == 1, "backward requires a scalar loss");
  NodeT<R>* root = loss.node();
  check(!root->backward_ran, "backward called twice on the same graph");
  root->backward_ran = true;
  auto order = topo_order(root);
  root->ensure_grad();
  root->grad[0] = R(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<R>* n = *it;
    if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
  }
}

// Set of parameter nodes reachable from a loss (graph inspection helper).
template <class R>
std::unordered_set<const NodeT<R>*> reachable_nodes(const TensorT<R>& loss) {
  std::unordered_set<const NodeT<R>*> out;
  for (auto* n : topo_order(loss.node())) out.insert(n);
  return out;
}

}  // namespace arwm
