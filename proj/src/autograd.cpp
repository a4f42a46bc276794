#include "xsgen/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace xsg::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

VarPtr make_var(Tensor t, bool requires_grad) {
  auto v = std::make_shared<Var>();
  v->val = std::move(t);
  v->requires_grad = requires_grad;
  return v;
}

namespace {

VarPtr make_result(Tensor val, std::vector<VarPtr> parents,
                   std::function<void(Var&)> bw) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto r = make_var(std::move(val), rg);
  if (rg) {
    r->parents = std::move(parents);
    r->backward_fn = std::move(bw);
  }
  return r;
}

}  // namespace

void backward(const VarPtr& root) {
  XSG_CHECK_SHAPE(root->val.numel() == 1, "backward: root must be scalar");
  // Iterative post-order DFS.
  std::vector<Var*> order;
  std::unordered_set<Var*> seen;
  std::vector<std::pair<Var*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Var* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor one({1});
  one[0] = 1.0;
  root->accumulate(one);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Var* v = *it;
    if (v->backward_fn && v->grad.defined()) v->backward_fn(*v);
  }
}

// ---------------------------------------------------------------- elementwise

VarPtr add(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.same_shape(b->val), "add: shape mismatch");
  Tensor out(a->val.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] + b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Var& r) {
    if (a->requires_grad) a->accumulate(r.grad);
    if (b->requires_grad) b->accumulate(r.grad);
  });
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor out(a->val.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] - b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Var& r) {
    if (a->requires_grad) a->accumulate(r.grad);
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= r.grad[i];
    }
  });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor out(a->val.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] * b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Var& r) {
    const int64_t n = r.grad.numel();
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] += r.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] += r.grad[i] * a->val[i];
    }
  });
}

VarPtr add_scalar(const VarPtr& a, double s) {
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] + s;
  return make_result(std::move(out), {a},
                     [a](Var& r) { a->accumulate(r.grad); });
}

VarPtr mul_scalar(const VarPtr& a, double s) {
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * s;
  return make_result(std::move(out), {a}, [a, s](Var& r) {
    Tensor& g = a->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += r.grad[i] * s;
  });
}

VarPtr neg(const VarPtr& a) { return mul_scalar(a, -1.0); }

namespace {

template <typename FwdFn, typename GradFn>
VarPtr unary_op(const VarPtr& x, FwdFn f, GradFn dfdx_from_xy) {
  Tensor out(x->val.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = f(x->val[i]);
  return make_result(std::move(out), {x}, [x, dfdx_from_xy](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += r.grad[i] * dfdx_from_xy(x->val[i], r.val[i]);
  });
}

}  // namespace

VarPtr relu(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

VarPtr sigmoid(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

VarPtr silu(const VarPtr& x) {
  return unary_op(
      x,
      [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

VarPtr tanh_op(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

VarPtr exp_op(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

VarPtr log_op(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

VarPtr sqrt_op(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

VarPtr square(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

VarPtr abs_op(const VarPtr& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

VarPtr clamp(const VarPtr& x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

VarPtr safe_rnorm_rows(const VarPtr& x, double eps) {
  XSG_CHECK_SHAPE(x->val.ndim() == 2, "safe_rnorm_rows: expects [R,C]");
  const int64_t rows = x->val.dim(0), cols = x->val.dim(1);
  Tensor out(x->val.shape());
  Tensor norms({rows});
  for (int64_t r = 0; r < rows; ++r) {
    double s = eps;
    for (int64_t c = 0; c < cols; ++c) {
      const double v = x->val[r * cols + c];
      s += v * v;
    }
    const double nr = std::sqrt(s);
    norms[r] = nr;
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = x->val[r * cols + c] / nr;
  }
  return make_result(std::move(out), {x}, [x, norms, rows, cols](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t i = 0; i < rows; ++i) {
      const double nr = norms[i];
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c)
        dot += r.grad[i * cols + c] * x->val[i * cols + c];
      for (int64_t c = 0; c < cols; ++c) {
        g[i * cols + c] +=
            r.grad[i * cols + c] / nr - x->val[i * cols + c] * dot / (nr * nr * nr);
      }
    }
  });
}

// --------------------------------------------------------------- broadcasting

VarPtr add_bias(const VarPtr& x, const VarPtr& b) {
  const int64_t d = b->val.numel();
  XSG_CHECK_SHAPE(x->val.numel() % d == 0 && x->val.dim(x->val.ndim() - 1) == d,
                  "add_bias: trailing dim mismatch");
  Tensor out(x->val.shape());
  const int64_t rows = x->val.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < d; ++c) out[r * d + c] = x->val[r * d + c] + b->val[c];
  return make_result(std::move(out), {x, b}, [x, b, rows, d](Var& r) {
    if (x->requires_grad) x->accumulate(r.grad);
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t c = 0; c < d; ++c) g[c] += r.grad[i * d + c];
    }
  });
}

VarPtr add_channel_bias(const VarPtr& x, const VarPtr& b, int64_t channels) {
  XSG_CHECK_SHAPE(b->val.numel() == channels, "add_channel_bias: bias size");
  XSG_CHECK_SHAPE(x->val.ndim() >= 2 && x->val.dim(1) == channels,
                  "add_channel_bias: x dim(1) must be channels");
  const int64_t batch = x->val.dim(0);
  const int64_t spatial = x->val.numel() / (batch * channels);
  Tensor out(x->val.shape());
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t base = (n * channels + c) * spatial;
      const double bv = b->val[c];
      for (int64_t s = 0; s < spatial; ++s) out[base + s] = x->val[base + s] + bv;
    }
  return make_result(std::move(out), {x, b},
                     [x, b, batch, channels, spatial](Var& r) {
                       if (x->requires_grad) x->accumulate(r.grad);
                       if (b->requires_grad) {
                         Tensor& g = b->ensure_grad();
                         for (int64_t n = 0; n < batch; ++n)
                           for (int64_t c = 0; c < channels; ++c) {
                             const int64_t base = (n * channels + c) * spatial;
                             double acc = 0.0;
                             for (int64_t s = 0; s < spatial; ++s) acc += r.grad[base + s];
                             g[c] += acc;
                           }
                       }
                     });
}

// ------------------------------------------------------------- linear algebra

VarPtr matmul(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.ndim() == 2 && b->val.ndim() == 2 &&
                      a->val.dim(1) == b->val.dim(0),
                  "matmul: bad shapes");
  const int64_t m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
  Tensor out({m, n});
  MMap(out.data(), m, n).noalias() =
      CMap(a->val.data(), m, k) * CMap(b->val.data(), k, n);
  return make_result(std::move(out), {a, b}, [a, b, m, k, n](Var& r) {
    CMap dr(r.grad.data(), m, n);
    if (a->requires_grad) {
      MMap(a->ensure_grad().data(), m, k).noalias() +=
          dr * CMap(b->val.data(), k, n).transpose();
    }
    if (b->requires_grad) {
      MMap(b->ensure_grad().data(), k, n).noalias() +=
          CMap(a->val.data(), m, k).transpose() * dr;
    }
  });
}

VarPtr bmm(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.ndim() == 3 && b->val.ndim() == 3 &&
                      a->val.dim(0) == b->val.dim(0) && a->val.dim(2) == b->val.dim(1),
                  "bmm: bad shapes");
  const int64_t B = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2),
                n = b->val.dim(2);
  Tensor out({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    MMap(out.data() + i * m * n, m, n).noalias() =
        CMap(a->val.data() + i * m * k, m, k) * CMap(b->val.data() + i * k * n, k, n);
  }
  return make_result(std::move(out), {a, b}, [a, b, B, m, k, n](Var& r) {
    for (int64_t i = 0; i < B; ++i) {
      CMap dr(r.grad.data() + i * m * n, m, n);
      if (a->requires_grad) {
        MMap(a->ensure_grad().data() + i * m * k, m, k).noalias() +=
            dr * CMap(b->val.data() + i * k * n, k, n).transpose();
      }
      if (b->requires_grad) {
        MMap(b->ensure_grad().data() + i * k * n, k, n).noalias() +=
            CMap(a->val.data() + i * m * k, m, k).transpose() * dr;
      }
    }
  });
}

VarPtr bmm_nt(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.ndim() == 3 && b->val.ndim() == 3 &&
                      a->val.dim(0) == b->val.dim(0) && a->val.dim(2) == b->val.dim(2),
                  "bmm_nt: bad shapes");
  const int64_t B = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2),
                n = b->val.dim(1);
  Tensor out({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    MMap(out.data() + i * m * n, m, n).noalias() =
        CMap(a->val.data() + i * m * k, m, k) *
        CMap(b->val.data() + i * n * k, n, k).transpose();
  }
  return make_result(std::move(out), {a, b}, [a, b, B, m, k, n](Var& r) {
    for (int64_t i = 0; i < B; ++i) {
      CMap dr(r.grad.data() + i * m * n, m, n);
      if (a->requires_grad) {
        MMap(a->ensure_grad().data() + i * m * k, m, k).noalias() +=
            dr * CMap(b->val.data() + i * n * k, n, k);
      }
      if (b->requires_grad) {
        MMap(b->ensure_grad().data() + i * n * k, n, k).noalias() +=
            dr.transpose() * CMap(a->val.data() + i * m * k, m, k);
      }
    }
  });
}

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
  const int64_t k = w->val.dim(0), n = w->val.dim(1);
  XSG_CHECK_SHAPE(x->val.dim(x->val.ndim() - 1) == k, "linear: in-dim mismatch");
  std::vector<int64_t> out_shape = x->val.shape();
  out_shape.back() = n;
  auto x2 = reshape(x, {x->val.numel() / k, k});
  auto y = matmul(x2, w);
  if (b) y = add_bias(y, b);
  return reshape(y, std::move(out_shape));
}

// ----------------------------------------------------------------------- shape

VarPtr reshape(const VarPtr& x, std::vector<int64_t> shape) {
  Tensor out = x->val.reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [x](Var& r) {
    x->accumulate(r.grad.reshaped(x->val.shape()));
  });
}

VarPtr permute_0213(const VarPtr& x) {
  XSG_CHECK_SHAPE(x->val.ndim() == 4, "permute_0213: expects 4-d");
  const int64_t A = x->val.dim(0), B = x->val.dim(1), C = x->val.dim(2),
                D = x->val.dim(3);
  Tensor out({A, C, B, D});
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        const double* src = x->val.data() + ((a * B + b) * C + c) * D;
        double* dst = out.data() + ((a * C + c) * B + b) * D;
        std::copy(src, src + D, dst);
      }
  return make_result(std::move(out), {x}, [x, A, B, C, D](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t a = 0; a < A; ++a)
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const double* src = r.grad.data() + ((a * C + c) * B + b) * D;
          double* dst = g.data() + ((a * B + b) * C + c) * D;
          for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

VarPtr transpose2d(const VarPtr& x) {
  XSG_CHECK_SHAPE(x->val.ndim() == 2, "transpose2d: expects 2-d");
  const int64_t m = x->val.dim(0), n = x->val.dim(1);
  Tensor out({n, m});
  MMap(out.data(), n, m) = CMap(x->val.data(), m, n).transpose();
  return make_result(std::move(out), {x}, [x, m, n](Var& r) {
    MMap(x->ensure_grad().data(), m, n) += CMap(r.grad.data(), n, m).transpose();
  });
}

VarPtr concat_lastdim(const std::vector<VarPtr>& xs) {
  XSG_CHECK_SHAPE(!xs.empty(), "concat_lastdim: empty");
  const auto& s0 = xs[0]->val.shape();
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < s0.size(); ++i) rows *= s0[i];
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const auto& x : xs) {
    const int64_t w = x->val.dim(x->val.ndim() - 1);
    XSG_CHECK_SHAPE(x->val.numel() == rows * w, "concat_lastdim: leading dims differ");
    widths.push_back(w);
    total += w;
  }
  std::vector<int64_t> out_shape(s0.begin(), s0.end() - 1);
  out_shape.push_back(total);
  Tensor out(out_shape);
  int64_t off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const int64_t w = widths[i];
    for (int64_t r = 0; r < rows; ++r)
      std::copy(xs[i]->val.data() + r * w, xs[i]->val.data() + (r + 1) * w,
                out.data() + r * total + off);
    off += w;
  }
  std::vector<VarPtr> parents(xs.begin(), xs.end());
  return make_result(std::move(out), parents,
                     [xs, widths, rows, total](Var& r) {
                       int64_t off = 0;
                       for (size_t i = 0; i < xs.size(); ++i) {
                         const int64_t w = widths[i];
                         if (xs[i]->requires_grad) {
                           Tensor& g = xs[i]->ensure_grad();
                           for (int64_t rr = 0; rr < rows; ++rr)
                             for (int64_t c = 0; c < w; ++c)
                               g[rr * w + c] += r.grad[rr * total + off + c];
                         }
                         off += w;
                       }
                     });
}

VarPtr slice_lastdim(const VarPtr& x, int64_t start, int64_t len) {
  const int64_t d = x->val.dim(x->val.ndim() - 1);
  XSG_CHECK_SHAPE(start >= 0 && start + len <= d, "slice_lastdim: out of range");
  const int64_t rows = x->val.numel() / d;
  std::vector<int64_t> out_shape = x->val.shape();
  out_shape.back() = len;
  Tensor out(out_shape);
  for (int64_t r = 0; r < rows; ++r)
    std::copy(x->val.data() + r * d + start, x->val.data() + r * d + start + len,
              out.data() + r * len);
  return make_result(std::move(out), {x}, [x, start, len, d, rows](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t rr = 0; rr < rows; ++rr)
      for (int64_t c = 0; c < len; ++c) g[rr * d + start + c] += r.grad[rr * len + c];
  });
}

VarPtr concat_axis0(const std::vector<VarPtr>& xs) {
  XSG_CHECK_SHAPE(!xs.empty(), "concat_axis0: empty");
  std::vector<int64_t> tail(xs[0]->val.shape().begin() + 1, xs[0]->val.shape().end());
  int64_t rows = 0;
  const int64_t inner = xs[0]->val.numel() / std::max<int64_t>(1, xs[0]->val.dim(0));
  for (const auto& x : xs) rows += x->val.dim(0);
  std::vector<int64_t> out_shape;
  out_shape.push_back(rows);
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  Tensor out(out_shape);
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->val.data(), x->val.data() + x->val.numel(), out.data() + off);
    off += x->val.numel();
  }
  std::vector<VarPtr> parents(xs.begin(), xs.end());
  return make_result(std::move(out), parents, [xs, inner](Var& r) {
    int64_t off = 0;
    for (const auto& x : xs) {
      const int64_t n = x->val.numel();
      if (x->requires_grad) {
        Tensor& g = x->ensure_grad();
        for (int64_t i = 0; i < n; ++i) g[i] += r.grad[off + i];
      }
      off += n;
    }
    (void)inner;
  });
}

VarPtr slice_axis0(const VarPtr& x, int64_t start, int64_t len) {
  XSG_CHECK_SHAPE(x->val.ndim() >= 1 && start >= 0 && start + len <= x->val.dim(0),
                  "slice_axis0: out of range");
  const int64_t inner = x->val.numel() / x->val.dim(0);
  std::vector<int64_t> out_shape = x->val.shape();
  out_shape[0] = len;
  Tensor out(out_shape);
  std::copy(x->val.data() + start * inner, x->val.data() + (start + len) * inner,
            out.data());
  return make_result(std::move(out), {x}, [x, start, len, inner](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t i = 0; i < len * inner; ++i) g[start * inner + i] += r.grad[i];
  });
}

VarPtr stack_axis1(const std::vector<VarPtr>& xs) {
  XSG_CHECK_SHAPE(!xs.empty(), "stack_axis1: empty");
  const int64_t L = xs[0]->val.dim(0);
  const int64_t D = xs[0]->val.dim(1);
  const int64_t S = static_cast<int64_t>(xs.size());
  for (const auto& x : xs)
    XSG_CHECK_SHAPE(x->val.ndim() == 2 && x->val.dim(0) == L && x->val.dim(1) == D,
                    "stack_axis1: shape mismatch");
  Tensor out({L, S, D});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t l = 0; l < L; ++l)
      std::copy(xs[static_cast<size_t>(s)]->val.data() + l * D,
                xs[static_cast<size_t>(s)]->val.data() + (l + 1) * D,
                out.data() + (l * S + s) * D);
  std::vector<VarPtr> parents(xs.begin(), xs.end());
  return make_result(std::move(out), parents, [xs, L, S, D](Var& r) {
    for (int64_t s = 0; s < S; ++s) {
      const auto& x = xs[static_cast<size_t>(s)];
      if (!x->requires_grad) continue;
      Tensor& g = x->ensure_grad();
      for (int64_t l = 0; l < L; ++l)
        for (int64_t d = 0; d < D; ++d) g[l * D + d] += r.grad[(l * S + s) * D + d];
    }
  });
}

// ---------------------------------------------------------------------- gather

VarPtr gather_rows(const VarPtr& x, const std::vector<int64_t>& idx) {
  XSG_CHECK_SHAPE(x->val.ndim() == 2, "gather_rows: expects [M,D]");
  const int64_t M = x->val.dim(0), D = x->val.dim(1);
  const int64_t K = static_cast<int64_t>(idx.size());
  Tensor out({K, D});
  for (int64_t i = 0; i < K; ++i) {
    XSG_CHECK_SHAPE(idx[static_cast<size_t>(i)] >= 0 && idx[static_cast<size_t>(i)] < M,
                    "gather_rows: index out of range");
    std::copy(x->val.data() + idx[static_cast<size_t>(i)] * D,
              x->val.data() + (idx[static_cast<size_t>(i)] + 1) * D, out.data() + i * D);
  }
  return make_result(std::move(out), {x}, [x, idx, D](Var& r) {
    Tensor& g = x->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t d = 0; d < D; ++d)
        g[idx[i] * D + d] += r.grad[static_cast<int64_t>(i) * D + d];
  });
}

// ---------------------------------------------------------------- reductions

VarPtr sum(const VarPtr& x) {
  Tensor out({1});
  double acc = 0.0;
  for (int64_t i = 0; i < x->val.numel(); ++i) acc += x->val[i];
  out[0] = acc;
  return make_result(std::move(out), {x}, [x](Var& r) {
    Tensor& g = x->ensure_grad();
    const double gg = r.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gg;
  });
}

VarPtr mean(const VarPtr& x) {
  const double inv = 1.0 / static_cast<double>(x->val.numel());
  return mul_scalar(sum(x), inv);
}

VarPtr softmax_lastdim(const VarPtr& x) {
  const int64_t d = x->val.dim(x->val.ndim() - 1);
  const int64_t rows = x->val.numel() / d;
  Tensor out(x->val.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x->val.data() + r * d;
    double* dst = out.data() + r * d;
    double mx = src[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, src[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      dst[i] = std::exp(src[i] - mx);
      denom += dst[i];
    }
    for (int64_t i = 0; i < d; ++i) dst[i] /= denom;
  }
  return make_result(std::move(out), {x}, [x, rows, d](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t rr = 0; rr < rows; ++rr) {
      const double* y = r.val.data() + rr * d;
      const double* dy = r.grad.data() + rr * d;
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += y[i] * dy[i];
      for (int64_t i = 0; i < d; ++i) g[rr * d + i] += y[i] * (dy[i] - dot);
    }
  });
}

VarPtr layer_norm_lastdim(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta,
                          double eps) {
  const int64_t d = x->val.dim(x->val.ndim() - 1);
  XSG_CHECK_SHAPE(gamma->val.numel() == d && beta->val.numel() == d,
                  "layer_norm: gamma/beta size");
  const int64_t rows = x->val.numel() / d;
  Tensor out(x->val.shape());
  Tensor mu({rows}), rstd({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x->val.data() + r * d;
    double m = 0.0;
    for (int64_t i = 0; i < d; ++i) m += src[i];
    m /= d;
    double v = 0.0;
    for (int64_t i = 0; i < d; ++i) v += (src[i] - m) * (src[i] - m);
    v /= d;
    const double rs = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    rstd[r] = rs;
    for (int64_t i = 0; i < d; ++i)
      out[r * d + i] = (src[i] - m) * rs * gamma->val[i] + beta->val[i];
  }
  return make_result(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, mu, rstd, rows, d](Var& r) {
        for (int64_t rr = 0; rr < rows; ++rr) {
          const double m = mu[rr], rs = rstd[rr];
          const double* src = x->val.data() + rr * d;
          const double* dy = r.grad.data() + rr * d;
          // xhat_i = (x_i - m) * rs
          double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            const double xhat = (src[i] - m) * rs;
            const double dyg = dy[i] * gamma->val[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
          }
          if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int64_t i = 0; i < d; ++i) {
              const double xhat = (src[i] - m) * rs;
              const double dyg = dy[i] * gamma->val[i];
              gx[rr * d + i] +=
                  rs * (dyg - sum_dyg / d - xhat * sum_dyg_xhat / d);
            }
          }
          if (gamma->requires_grad) {
            Tensor& gg = gamma->ensure_grad();
            for (int64_t i = 0; i < d; ++i)
              gg[i] += dy[i] * (src[i] - m) * rs;
          }
          if (beta->requires_grad) {
            Tensor& gb = beta->ensure_grad();
            for (int64_t i = 0; i < d; ++i) gb[i] += dy[i];
          }
        }
      });
}

VarPtr mse_mean(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.same_shape(b->val), "mse_mean: shape mismatch");
  const int64_t n = a->val.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = a->val[i] - b->val[i];
    acc += d * d;
  }
  Tensor out({1});
  out[0] = acc / n;
  return make_result(std::move(out), {a, b}, [a, b, n](Var& r) {
    const double s = 2.0 * r.grad[0] / n;
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] += s * (a->val[i] - b->val[i]);
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) g[i] -= s * (a->val[i] - b->val[i]);
    }
  });
}

VarPtr l1_mean(const VarPtr& a, const VarPtr& b) {
  XSG_CHECK_SHAPE(a->val.same_shape(b->val), "l1_mean: shape mismatch");
  const int64_t n = a->val.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::fabs(a->val[i] - b->val[i]);
  Tensor out({1});
  out[0] = acc / n;
  return make_result(std::move(out), {a, b}, [a, b, n](Var& r) {
    const double s = r.grad[0] / n;
    for (int64_t i = 0; i < n; ++i) {
      const double d = a->val[i] - b->val[i];
      const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (a->requires_grad) a->ensure_grad()[i] += s * sg;
      if (b->requires_grad) b->ensure_grad()[i] -= s * sg;
    }
  });
}

VarPtr huber_masked_mean(const VarPtr& pred, const VarPtr& gt, const Tensor& mask,
                         double delta) {
  XSG_CHECK_SHAPE(pred->val.same_shape(gt->val) && pred->val.numel() == mask.numel(),
                  "huber_masked_mean: shape mismatch");
  const int64_t n = pred->val.numel();
  double acc = 0.0;
  int64_t cnt = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (mask[i] <= 0.5) continue;
    ++cnt;
    const double d = pred->val[i] - gt->val[i];
    const double ad = std::fabs(d);
    acc += (ad <= delta) ? 0.5 * d * d : delta * (ad - 0.5 * delta);
  }
  Tensor out({1});
  out[0] = cnt > 0 ? acc / cnt : 0.0;
  return make_result(std::move(out), {pred, gt}, [pred, gt, mask, delta, n,
                                                  cnt](Var& r) {
    if (cnt == 0) return;
    const double s = r.grad[0] / cnt;
    for (int64_t i = 0; i < n; ++i) {
      if (mask[i] <= 0.5) continue;
      const double d = pred->val[i] - gt->val[i];
      const double dd = (std::fabs(d) <= delta) ? d : (d > 0 ? delta : -delta);
      if (pred->requires_grad) pred->ensure_grad()[i] += s * dd;
      if (gt->requires_grad) gt->ensure_grad()[i] -= s * dd;
    }
  });
}

VarPtr bce_logits_mean(const VarPtr& logits, const Tensor& targets) {
  XSG_CHECK_SHAPE(logits->val.numel() == targets.numel(), "bce: shape mismatch");
  const int64_t n = logits->val.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits->val[i], t = targets[i];
    // log(1+exp(-|z|)) + max(z,0) - z*t
    acc += std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.0) - z * t;
  }
  Tensor out({1});
  out[0] = acc / n;
  return make_result(std::move(out), {logits}, [logits, targets, n](Var& r) {
    const double s = r.grad[0] / n;
    Tensor& g = logits->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits->val[i]));
      g[i] += s * (p - targets[i]);
    }
  });
}

// -------------------------------------------------------------- convolutions

namespace {

// im2col for 2d: x [C,H,W] -> cols [(C*kh*kw), (Ho*Wo)]
void im2col2d(const double* x, int64_t C, int64_t H, int64_t W, int k, int stride,
              int pad, int64_t Ho, int64_t Wo, double* cols) {
  for (int64_t c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t yi = i * stride + ki - pad;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t xj = j * stride + kj - pad;
            row[i * Wo + j] = (yi >= 0 && yi < H && xj >= 0 && xj < W)
                                  ? x[(c * H + yi) * W + xj]
                                  : 0.0;
          }
        }
      }
}

void col2im2d(const double* cols, int64_t C, int64_t H, int64_t W, int k, int stride,
              int pad, int64_t Ho, int64_t Wo, double* gx) {
  for (int64_t c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t yi = i * stride + ki - pad;
          if (yi < 0 || yi >= H) continue;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t xj = j * stride + kj - pad;
            if (xj < 0 || xj >= W) continue;
            gx[(c * H + yi) * W + xj] += row[i * Wo + j];
          }
        }
      }
}

}  // namespace

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad) {
  XSG_CHECK_SHAPE(x->val.ndim() == 4 && w->val.ndim() == 4, "conv2d: bad rank");
  const int64_t B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2),
                W = x->val.dim(3);
  const int64_t Co = w->val.dim(0);
  XSG_CHECK_SHAPE(w->val.dim(1) == C && w->val.dim(2) == w->val.dim(3),
                  "conv2d: weight shape");
  const int k = static_cast<int>(w->val.dim(2));
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (W + 2 * pad - k) / stride + 1;
  const int64_t ck2 = C * k * k;
  Tensor out({B, Co, Ho, Wo});
  {
    Tensor cols({ck2, Ho * Wo});
    for (int64_t n = 0; n < B; ++n) {
      im2col2d(x->val.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
               cols.data());
      MMap(out.data() + n * Co * Ho * Wo, Co, Ho * Wo).noalias() =
          CMap(w->val.data(), Co, ck2) * CMap(cols.data(), ck2, Ho * Wo);
    }
  }
  auto r = make_result(
      std::move(out), {x, w}, [x, w, B, C, H, W, Co, k, stride, pad, Ho, Wo,
                               ck2](Var& rr) {
        Tensor cols({ck2, Ho * Wo});
        Tensor dcols({ck2, Ho * Wo});
        for (int64_t n = 0; n < B; ++n) {
          CMap dy(rr.grad.data() + n * Co * Ho * Wo, Co, Ho * Wo);
          if (w->requires_grad) {
            im2col2d(x->val.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
                     cols.data());
            MMap(w->ensure_grad().data(), Co, ck2).noalias() +=
                dy * CMap(cols.data(), ck2, Ho * Wo).transpose();
          }
          if (x->requires_grad) {
            MMap(dcols.data(), ck2, Ho * Wo).noalias() =
                CMap(w->val.data(), Co, ck2).transpose() * dy;
            col2im2d(dcols.data(), C, H, W, k, stride, pad, Ho, Wo,
                     x->ensure_grad().data() + n * C * H * W);
          }
        }
      });
  if (b) r = add_channel_bias(r, b, Co);
  return r;
}

namespace {

void im2col3d(const double* x, int64_t C, int64_t D, int64_t H, int64_t W, int k,
              int stride, int pad, int64_t Do, int64_t Ho, int64_t Wo, double* cols) {
  const int64_t plane = Do * Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          double* row = cols + (((c * k + kd) * k + ki) * k + kj) * plane;
          for (int64_t dz = 0; dz < Do; ++dz) {
            const int64_t zz = dz * stride + kd - pad;
            for (int64_t i = 0; i < Ho; ++i) {
              const int64_t yy = i * stride + ki - pad;
              for (int64_t j = 0; j < Wo; ++j) {
                const int64_t xx = j * stride + kj - pad;
                row[(dz * Ho + i) * Wo + j] =
                    (zz >= 0 && zz < D && yy >= 0 && yy < H && xx >= 0 && xx < W)
                        ? x[((c * D + zz) * H + yy) * W + xx]
                        : 0.0;
              }
            }
          }
        }
}

void col2im3d(const double* cols, int64_t C, int64_t D, int64_t H, int64_t W, int k,
              int stride, int pad, int64_t Do, int64_t Ho, int64_t Wo, double* gx) {
  const int64_t plane = Do * Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const double* row = cols + (((c * k + kd) * k + ki) * k + kj) * plane;
          for (int64_t dz = 0; dz < Do; ++dz) {
            const int64_t zz = dz * stride + kd - pad;
            if (zz < 0 || zz >= D) continue;
            for (int64_t i = 0; i < Ho; ++i) {
              const int64_t yy = i * stride + ki - pad;
              if (yy < 0 || yy >= H) continue;
              for (int64_t j = 0; j < Wo; ++j) {
                const int64_t xx = j * stride + kj - pad;
                if (xx < 0 || xx >= W) continue;
                gx[((c * D + zz) * H + yy) * W + xx] += row[(dz * Ho + i) * Wo + j];
              }
            }
          }
        }
}

}  // namespace

VarPtr conv3d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad) {
  XSG_CHECK_SHAPE(x->val.ndim() == 5 && w->val.ndim() == 5, "conv3d: bad rank");
  const int64_t B = x->val.dim(0), C = x->val.dim(1), D = x->val.dim(2),
                H = x->val.dim(3), W = x->val.dim(4);
  const int64_t Co = w->val.dim(0);
  const int k = static_cast<int>(w->val.dim(2));
  const int64_t Do = (D + 2 * pad - k) / stride + 1;
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (W + 2 * pad - k) / stride + 1;
  const int64_t ck3 = C * k * k * k;
  const int64_t plane = Do * Ho * Wo;
  Tensor out({B, Co, Do, Ho, Wo});
  {
    Tensor cols({ck3, plane});
    for (int64_t n = 0; n < B; ++n) {
      im2col3d(x->val.data() + n * C * D * H * W, C, D, H, W, k, stride, pad, Do, Ho,
               Wo, cols.data());
      MMap(out.data() + n * Co * plane, Co, plane).noalias() =
          CMap(w->val.data(), Co, ck3) * CMap(cols.data(), ck3, plane);
    }
  }
  auto r = make_result(
      std::move(out), {x, w},
      [x, w, B, C, D, H, W, Co, k, stride, pad, Do, Ho, Wo, ck3, plane](Var& rr) {
        Tensor cols({ck3, plane});
        Tensor dcols({ck3, plane});
        for (int64_t n = 0; n < B; ++n) {
          CMap dy(rr.grad.data() + n * Co * plane, Co, plane);
          if (w->requires_grad) {
            im2col3d(x->val.data() + n * C * D * H * W, C, D, H, W, k, stride, pad,
                     Do, Ho, Wo, cols.data());
            MMap(w->ensure_grad().data(), Co, ck3).noalias() +=
                dy * CMap(cols.data(), ck3, plane).transpose();
          }
          if (x->requires_grad) {
            MMap(dcols.data(), ck3, plane).noalias() =
                CMap(w->val.data(), Co, ck3).transpose() * dy;
            col2im3d(dcols.data(), C, D, H, W, k, stride, pad, Do, Ho, Wo,
                     x->ensure_grad().data() + n * C * D * H * W);
          }
        }
      });
  if (b) r = add_channel_bias(r, b, Co);
  return r;
}

VarPtr upsample2x_2d(const VarPtr& x) {
  XSG_CHECK_SHAPE(x->val.ndim() == 4, "upsample2x_2d: expects [B,C,H,W]");
  const int64_t B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2),
                W = x->val.dim(3);
  Tensor out({B, C, H * 2, W * 2});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = x->val.data() + bc * H * W;
    double* dst = out.data() + bc * 4 * H * W;
    for (int64_t i = 0; i < 2 * H; ++i)
      for (int64_t j = 0; j < 2 * W; ++j)
        dst[i * 2 * W + j] = src[(i / 2) * W + (j / 2)];
  }
  return make_result(std::move(out), {x}, [x, B, C, H, W](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const double* src = r.grad.data() + bc * 4 * H * W;
      double* dst = g.data() + bc * H * W;
      for (int64_t i = 0; i < 2 * H; ++i)
        for (int64_t j = 0; j < 2 * W; ++j)
          dst[(i / 2) * W + (j / 2)] += src[i * 2 * W + j];
    }
  });
}

VarPtr upsample2x_3d(const VarPtr& x) {
  XSG_CHECK_SHAPE(x->val.ndim() == 5, "upsample2x_3d: expects [B,C,D,H,W]");
  const int64_t B = x->val.dim(0), C = x->val.dim(1), D = x->val.dim(2),
                H = x->val.dim(3), W = x->val.dim(4);
  Tensor out({B, C, D * 2, H * 2, W * 2});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = x->val.data() + bc * D * H * W;
    double* dst = out.data() + bc * 8 * D * H * W;
    for (int64_t z = 0; z < 2 * D; ++z)
      for (int64_t i = 0; i < 2 * H; ++i)
        for (int64_t j = 0; j < 2 * W; ++j)
          dst[(z * 2 * H + i) * 2 * W + j] = src[((z / 2) * H + i / 2) * W + j / 2];
  }
  return make_result(std::move(out), {x}, [x, B, C, D, H, W](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const double* src = r.grad.data() + bc * 8 * D * H * W;
      double* dst = g.data() + bc * D * H * W;
      for (int64_t z = 0; z < 2 * D; ++z)
        for (int64_t i = 0; i < 2 * H; ++i)
          for (int64_t j = 0; j < 2 * W; ++j)
            dst[((z / 2) * H + i / 2) * W + j / 2] += src[(z * 2 * H + i) * 2 * W + j];
    }
  });
}

VarPtr box_filter2d_valid(const VarPtr& x, int win) {
  XSG_CHECK_SHAPE(x->val.ndim() == 3, "box_filter2d_valid: expects [C,H,W]");
  const int64_t C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  XSG_CHECK_SHAPE(win >= 1 && win <= H && win <= W, "box_filter2d_valid: window");
  const int64_t Ho = H - win + 1, Wo = W - win + 1;
  const double inv = 1.0 / (static_cast<double>(win) * win);
  Tensor out({C, Ho, Wo});
  for (int64_t c = 0; c < C; ++c) {
    const double* src = x->val.data() + c * H * W;
    double* dst = out.data() + c * Ho * Wo;
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (int ki = 0; ki < win; ++ki)
          for (int kj = 0; kj < win; ++kj) acc += src[(i + ki) * W + (j + kj)];
        dst[i * Wo + j] = acc * inv;
      }
  }
  return make_result(std::move(out), {x}, [x, C, H, W, Ho, Wo, win, inv](Var& r) {
    Tensor& g = x->ensure_grad();
    for (int64_t c = 0; c < C; ++c) {
      const double* dy = r.grad.data() + c * Ho * Wo;
      double* gx = g.data() + c * H * W;
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          const double v = dy[i * Wo + j] * inv;
          for (int ki = 0; ki < win; ++ki)
            for (int kj = 0; kj < win; ++kj) gx[(i + ki) * W + (j + kj)] += v;
        }
    }
  });
}

}  // namespace xsg::ag
