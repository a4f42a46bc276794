#include "xsgen/nn.hpp"

#include <cmath>

namespace xsg::nn {

ag::VarPtr MultiheadAttention::operator()(const ag::VarPtr& q_tokens,
                                          const ag::VarPtr& kv_tokens) const {
  const int64_t B = q_tokens->val.dim(0);
  const int64_t Tq = q_tokens->val.dim(1);
  const int64_t Tk = kv_tokens->val.dim(1);
  const int64_t dh = width / heads;

  auto split_heads = [&](const ag::VarPtr& t, int64_t T) {
    // [B,T,width] -> [B*h, T, dh]
    auto r = ag::reshape(t, {B, T, heads, dh});
    r = ag::permute_0213(r);  // [B, h, T, dh]
    return ag::reshape(r, {B * heads, T, dh});
  };

  auto q = split_heads(wq(q_tokens), Tq);
  auto k = split_heads(wk(kv_tokens), Tk);
  auto v = split_heads(wv(kv_tokens), Tk);

  auto scores = ag::mul_scalar(ag::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto att = ag::softmax_lastdim(scores);
  auto ctx = ag::bmm(att, v);  // [B*h, Tq, dh]
  ctx = ag::reshape(ctx, {B, heads, Tq, dh});
  ctx = ag::permute_0213(ctx);  // [B, Tq, h, dh]
  ctx = ag::reshape(ctx, {B, Tq, width});
  return wo(ctx);
}

Tensor sinusoidal_embedding(double t, int64_t d) {
  Tensor out({d});
  const int64_t half = d / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    out[2 * i] = std::sin(t * 1000.0 * freq);
    out[2 * i + 1] = std::cos(t * 1000.0 * freq);
  }
  if (d % 2 == 1) out[d - 1] = t;
  return out;
}

Tensor coord_embedding(const std::vector<std::array<int64_t, 3>>& coords, int64_t n_axis,
                       int64_t d) {
  const int64_t n = static_cast<int64_t>(coords.size());
  Tensor out({n, d});
  const int64_t per_axis = d / 3;
  const int64_t half = per_axis / 2;
  for (int64_t r = 0; r < n; ++r) {
    for (int axis = 0; axis < 3; ++axis) {
      const double x = (static_cast<double>(coords[static_cast<size_t>(r)][static_cast<size_t>(axis)]) + 0.5) /
                       static_cast<double>(n_axis);
      for (int64_t i = 0; i < half; ++i) {
        const double freq = std::pow(100.0, -static_cast<double>(i) / std::max<int64_t>(1, half));
        out[r * d + axis * per_axis + 2 * i] = std::sin(x * 50.0 * freq);
        out[r * d + axis * per_axis + 2 * i + 1] = std::cos(x * 50.0 * freq);
      }
    }
  }
  return out;
}

}  // namespace xsg::nn
