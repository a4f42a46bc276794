#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "xsgen/autograd.hpp"
#include "xsgen/rng.hpp"

namespace xsg::nn {

// Named parameter registry used by the optimizer and checkpoint I/O.
// Registration order is the init draw order, so a fixed seed reproduces
// bit-identical parameters.
struct ParamMap {
  std::vector<std::pair<std::string, ag::VarPtr>> items;
  void add(const std::string& name, const ag::VarPtr& v) { items.emplace_back(name, v); }
  void merge(const ParamMap& other, const std::string& prefix) {
    for (const auto& [n, v] : other.items) items.emplace_back(prefix + "." + n, v);
  }
  void clear_grads() {
    for (auto& [n, v] : items) v->clear_grad();
  }
  int64_t count() const {
    int64_t n = 0;
    for (const auto& [k, v] : items) n += v->val.numel();
    return n;
  }
};

struct Linear {
  ag::VarPtr w, b;
  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, bool zero_init = false) {
    Tensor wt({in, out});
    if (!zero_init) {
      const double std = 1.0 / std::sqrt(static_cast<double>(in));
      for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.gaussian() * std;
    }
    w = ag::param(wt);
    b = ag::param(Tensor({out}));
  }
  ag::VarPtr operator()(const ag::VarPtr& x) const { return ag::linear(x, w, b); }
  void collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

struct LayerNorm {
  ag::VarPtr gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(int64_t d) {
    gamma = ag::param(Tensor({d}, 1.0));
    beta = ag::param(Tensor({d}));
  }
  ag::VarPtr operator()(const ag::VarPtr& x) const {
    return ag::layer_norm_lastdim(x, gamma, beta);
  }
  void collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
  }
};

struct Mlp {
  Linear fc1, fc2;
  Mlp() = default;
  Mlp(int64_t in, int64_t hidden, int64_t out, Rng& rng, bool zero_last = false)
      : fc1(in, hidden, rng), fc2(hidden, out, rng, zero_last) {}
  ag::VarPtr operator()(const ag::VarPtr& x) const { return fc2(ag::silu(fc1(x))); }
  void collect(ParamMap& pm, const std::string& prefix) const {
    fc1.collect(pm, prefix + ".fc1");
    fc2.collect(pm, prefix + ".fc2");
  }
};

// Multi-head attention over batched token sequences. Query tokens [B,Tq,Dq],
// key/value tokens [B,Tk,Dkv]; output [B,Tq,Dq]. Scale is 1/sqrt(per-head dim).
struct MultiheadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int64_t width = 0;  // h * per-head dim
  MultiheadAttention() = default;
  MultiheadAttention(int64_t dq, int64_t dkv, int64_t attn_width, int h, Rng& rng,
                     bool zero_out = false)
      : wq(dq, attn_width, rng),
        wk(dkv, attn_width, rng),
        wv(dkv, attn_width, rng),
        wo(attn_width, dq, rng, zero_out),
        heads(h),
        width(attn_width) {
    XSG_CHECK(attn_width % h == 0, "attention width must be divisible by head count");
  }
  ag::VarPtr operator()(const ag::VarPtr& q_tokens, const ag::VarPtr& kv_tokens) const;
  void collect(ParamMap& pm, const std::string& prefix) const {
    wq.collect(pm, prefix + ".wq");
    wk.collect(pm, prefix + ".wk");
    wv.collect(pm, prefix + ".wv");
    wo.collect(pm, prefix + ".wo");
  }
};

struct Conv2dLayer {
  ag::VarPtr w, b;
  int stride = 1, pad = 1;
  Conv2dLayer() = default;
  Conv2dLayer(int64_t cin, int64_t cout, int k, int stride_, int pad_, Rng& rng,
              bool zero_init = false)
      : stride(stride_), pad(pad_) {
    Tensor wt({cout, cin, k, k});
    if (!zero_init) {
      const double std = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
      for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.gaussian() * std;
    }
    w = ag::param(wt);
    b = ag::param(Tensor({cout}));
  }
  ag::VarPtr operator()(const ag::VarPtr& x) const {
    return ag::conv2d(x, w, b, stride, pad);
  }
  void collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

struct Conv3dLayer {
  ag::VarPtr w, b;
  int stride = 1, pad = 1;
  Conv3dLayer() = default;
  Conv3dLayer(int64_t cin, int64_t cout, int k, int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    Tensor wt({cout, cin, k, k, k});
    const double std = 1.0 / std::sqrt(static_cast<double>(cin * k * k * k));
    for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.gaussian() * std;
    w = ag::param(wt);
    b = ag::param(Tensor({cout}));
  }
  ag::VarPtr operator()(const ag::VarPtr& x) const {
    return ag::conv3d(x, w, b, stride, pad);
  }
  void collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

// Sinusoidal embedding of a scalar in [0,1]; returns [d] tensor (constant).
Tensor sinusoidal_embedding(double t, int64_t d);
// Per-row sinusoidal embedding of integer coordinates, [n,3] -> [n,d].
Tensor coord_embedding(const std::vector<std::array<int64_t, 3>>& coords, int64_t n_axis,
                       int64_t d);

}  // namespace xsg::nn
