#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "xsgen/tensor.hpp"

namespace xsg::ag {

// Reverse-mode tape over dense double tensors. Graphs are built per step;
// parameter Vars persist across steps and collect gradients until cleared.
struct Var;
using VarPtr = std::shared_ptr<Var>;

struct Var {
  Tensor val;
  Tensor grad;  // undefined until first accumulation
  bool requires_grad = false;
  std::vector<VarPtr> parents;
  std::function<void(Var&)> backward_fn;

  Tensor& ensure_grad() {
    if (!grad.defined()) grad = Tensor(val.shape());
    return grad;
  }
  void accumulate(const Tensor& g) {
    Tensor& dst = ensure_grad();
    const double* s = g.data();
    double* d = dst.data();
    const int64_t n = dst.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
  }
  void clear_grad() { grad = Tensor(); }
};

VarPtr make_var(Tensor t, bool requires_grad = false);
inline VarPtr constant(Tensor t) { return make_var(std::move(t), false); }
inline VarPtr param(Tensor t) { return make_var(std::move(t), true); }

// Runs reverse accumulation from a scalar root.
void backward(const VarPtr& root);

// ---- elementwise / arithmetic ----
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr add_scalar(const VarPtr& a, double s);
VarPtr mul_scalar(const VarPtr& a, double s);
VarPtr neg(const VarPtr& a);
VarPtr relu(const VarPtr& x);
VarPtr silu(const VarPtr& x);
VarPtr sigmoid(const VarPtr& x);
VarPtr tanh_op(const VarPtr& x);
VarPtr exp_op(const VarPtr& x);
VarPtr log_op(const VarPtr& x);
VarPtr sqrt_op(const VarPtr& x);
VarPtr square(const VarPtr& x);
VarPtr abs_op(const VarPtr& x);
VarPtr clamp(const VarPtr& x, double lo, double hi);
VarPtr safe_rnorm_rows(const VarPtr& x, double eps);  // [R,3] -> row-normalized

// ---- broadcasting ----
// x: [..., D], b: [D]
VarPtr add_bias(const VarPtr& x, const VarPtr& b);
// x: [B, C, *spatial], b: [C] (broadcast over batch and spatial dims)
VarPtr add_channel_bias(const VarPtr& x, const VarPtr& b, int64_t channels);

// ---- linear algebra ----
VarPtr matmul(const VarPtr& a, const VarPtr& b);          // [m,k]x[k,n]
VarPtr bmm(const VarPtr& a, const VarPtr& b);             // [B,m,k]x[B,k,n]
VarPtr bmm_nt(const VarPtr& a, const VarPtr& b);          // [B,m,k]x[B,n,k]^T
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);  // x[...,k] w[k,n] b[n]

// ---- shape ----
VarPtr reshape(const VarPtr& x, std::vector<int64_t> shape);
VarPtr permute_0213(const VarPtr& x);  // [a,b,c,d] -> [a,c,b,d]
VarPtr transpose2d(const VarPtr& x);
VarPtr concat_lastdim(const std::vector<VarPtr>& xs);
VarPtr slice_lastdim(const VarPtr& x, int64_t start, int64_t len);
VarPtr concat_axis0(const std::vector<VarPtr>& xs);
VarPtr slice_axis0(const VarPtr& x, int64_t start, int64_t len);
VarPtr stack_axis1(const std::vector<VarPtr>& xs);  // S x [L,D] -> [L,S,D]

// ---- gather ----
VarPtr gather_rows(const VarPtr& x, const std::vector<int64_t>& idx);  // x[M,D] -> [K,D]

// ---- reductions / losses ----
VarPtr sum(const VarPtr& x);
VarPtr mean(const VarPtr& x);
VarPtr softmax_lastdim(const VarPtr& x);
VarPtr layer_norm_lastdim(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta,
                          double eps = 1e-6);
VarPtr mse_mean(const VarPtr& a, const VarPtr& b);
VarPtr l1_mean(const VarPtr& a, const VarPtr& b);
// Huber on (pred-gt), averaged over pixels where mask>0.5 (mask is constant data).
VarPtr huber_masked_mean(const VarPtr& pred, const VarPtr& gt, const Tensor& mask,
                         double delta);
VarPtr bce_logits_mean(const VarPtr& logits, const Tensor& targets);

// ---- convolutions (im2col + GEMM) ----
// x: [B, C, H, W], w: [Co, C, kh, kw], b: [Co]; pad is symmetric zero padding.
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad);
// x: [B, C, D, H, W], w: [Co, C, kd, kh, kw]
VarPtr conv3d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad);
VarPtr upsample2x_2d(const VarPtr& x);  // [B,C,H,W] nearest
VarPtr upsample2x_3d(const VarPtr& x);  // [B,C,D,H,W] nearest

// ---- filtering ----
// Uniform (box) mean filter, valid region only: [C,H,W] -> [C,H-win+1,W-win+1].
VarPtr box_filter2d_valid(const VarPtr& x, int win);

}  // namespace xsg::ag
