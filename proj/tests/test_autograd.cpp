#include "doctest.h"

#include "test_utils.hpp"
#include "xsgen/autograd.hpp"
#include "xsgen/nn.hpp"
#include "xsgen/optim.hpp"
#include "xsgen/rng.hpp"

using namespace xsg;
using namespace xsg::ag;
using xsg::testutil::grad_check;

namespace {

VarPtr rand_param(Rng& rng, std::vector<int64_t> shape, double scale = 0.7) {
  return param(rng.gaussian_tensor(std::move(shape), scale));
}

}  // namespace

TEST_CASE("elementwise ops: forward values") {
  auto a = constant(Tensor::from({3}, {1.0, -2.0, 0.5}));
  auto b = constant(Tensor::from({3}, {2.0, 3.0, -1.0}));
  auto s = add(a, b);
  CHECK(s->val[0] == doctest::Approx(3.0));
  CHECK(mul(a, b)->val[1] == doctest::Approx(-6.0));
  CHECK(relu(a)->val[1] == 0.0);
  CHECK(sigmoid(constant(Tensor::scalar(0.0)))->val[0] == doctest::Approx(0.5));
  CHECK(softmax_lastdim(constant(Tensor::from({2}, {1.0, 1.0})))->val[0] ==
        doctest::Approx(0.5));
}

TEST_CASE("gradcheck: unary and binary ops") {
  Rng rng(7);
  auto a = rand_param(rng, {2, 3});
  auto b = rand_param(rng, {2, 3});
  CHECK(grad_check([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b}) < 1e-7);
  CHECK(grad_check([&] { return mean(silu(a)); }, {a}) < 1e-7);
  CHECK(grad_check([&] { return mean(tanh_op(mul(a, b))); }, {a, b}) < 1e-7);
  CHECK(grad_check([&] { return mean(exp_op(mul_scalar(a, 0.3))); }, {a}) < 1e-7);
  CHECK(grad_check([&] { return mean(square(sigmoid(a))); }, {a}) < 1e-7);
  CHECK(grad_check([&] { return mean(sqrt_op(add_scalar(square(a), 1.0))); }, {a}) <
        1e-7);
}

TEST_CASE("gradcheck: matmul, bmm, linear") {
  Rng rng(11);
  auto a = rand_param(rng, {3, 4});
  auto b = rand_param(rng, {4, 2});
  CHECK(grad_check([&] { return sum(square(matmul(a, b))); }, {a, b}) < 1e-7);

  auto x = rand_param(rng, {2, 3, 4});
  auto y = rand_param(rng, {2, 4, 5});
  CHECK(grad_check([&] { return sum(square(bmm(x, y))); }, {x, y}) < 1e-7);

  auto q = rand_param(rng, {2, 3, 4});
  auto k = rand_param(rng, {2, 5, 4});
  CHECK(grad_check([&] { return sum(square(bmm_nt(q, k))); }, {q, k}) < 1e-7);

  nn::Linear lin(4, 3, rng);
  auto inp = rand_param(rng, {5, 4});
  CHECK(grad_check([&] { return mean(square(lin(inp))); }, {inp, lin.w, lin.b}) < 1e-7);
}

TEST_CASE("gradcheck: softmax, layernorm, reductions") {
  Rng rng(13);
  auto x = rand_param(rng, {3, 5});
  CHECK(grad_check([&] { return sum(square(softmax_lastdim(x))); }, {x}) < 1e-6);

  // Weighted output so the loss is not scale-invariant in x.
  nn::LayerNorm ln(5);
  for (int i = 0; i < 5; ++i) ln.gamma->val[i] = 0.5 + 0.2 * i;
  auto wts = constant(rng.gaussian_tensor({3, 5}, 1.0));
  CHECK(grad_check([&] { return sum(mul(ln(x), wts)); }, {x, ln.gamma, ln.beta}) < 1e-6);

  auto y = rand_param(rng, {3, 5});
  CHECK(grad_check([&] { return mse_mean(x, y); }, {x, y}) < 1e-7);
  CHECK(grad_check([&] { return l1_mean(x, y); }, {x, y}) < 1e-6);
}

TEST_CASE("gradcheck: shape ops and gather") {
  Rng rng(17);
  auto x = rand_param(rng, {2, 3, 2, 2});
  CHECK(grad_check([&] { return sum(square(permute_0213(x))); }, {x}) < 1e-7);

  auto a = rand_param(rng, {4, 3});
  auto b = rand_param(rng, {4, 2});
  CHECK(grad_check([&] { return sum(square(concat_lastdim({a, b}))); }, {a, b}) < 1e-7);
  CHECK(grad_check([&] { return sum(square(slice_lastdim(a, 1, 2))); }, {a}) < 1e-7);
  CHECK(grad_check([&] { return sum(square(stack_axis1({a, a}))); }, {a}) < 1e-7);

  std::vector<int64_t> idx{0, 2, 2, 3};
  CHECK(grad_check([&] { return sum(square(gather_rows(a, idx))); }, {a}) < 1e-7);
}

TEST_CASE("gradcheck: conv2d, conv3d, upsample, box filter") {
  Rng rng(19);
  auto x = rand_param(rng, {2, 3, 5, 5});
  nn::Conv2dLayer conv(3, 4, 3, 1, 1, rng);
  CHECK(grad_check([&] { return mean(square(conv(x))); }, {x, conv.w, conv.b}, 1e-5, 8) <
        1e-6);

  nn::Conv2dLayer convs(3, 2, 3, 2, 1, rng);
  CHECK(grad_check([&] { return mean(square(convs(x))); }, {x, convs.w}, 1e-5, 8) < 1e-6);

  auto x3 = rand_param(rng, {1, 2, 3, 3, 3});
  nn::Conv3dLayer c3(2, 2, 3, 1, 1, rng);
  CHECK(grad_check([&] { return mean(square(c3(x3))); }, {x3, c3.w, c3.b}, 1e-5, 8) <
        1e-6);

  CHECK(grad_check([&] { return mean(square(upsample2x_2d(x))); }, {x}) < 1e-7);
  CHECK(grad_check([&] { return mean(square(upsample2x_3d(x3))); }, {x3}) < 1e-7);

  auto img = rand_param(rng, {2, 6, 6});
  CHECK(grad_check([&] { return mean(square(box_filter2d_valid(img, 3))); }, {img}) <
        1e-7);
}

TEST_CASE("gradcheck: attention module") {
  Rng rng(23);
  nn::MultiheadAttention mha(6, 4, 8, 2, rng);
  auto q = rand_param(rng, {2, 3, 6});
  auto kv = rand_param(rng, {2, 5, 4});
  std::vector<VarPtr> ps{q, kv, mha.wq.w, mha.wk.w, mha.wv.w, mha.wo.w, mha.wo.b};
  CHECK(grad_check([&] { return mean(square(mha(q, kv))); }, ps, 1e-5, 6) < 1e-6);
}

TEST_CASE("gradcheck: huber and bce") {
  Rng rng(29);
  auto p = rand_param(rng, {3, 3});
  auto g = rand_param(rng, {3, 3});
  Tensor mask({3, 3});
  for (int i = 0; i < 9; ++i) mask[i] = (i % 2 == 0) ? 1.0 : 0.0;
  CHECK(grad_check([&] { return huber_masked_mean(p, g, mask, 1.0); }, {p, g}) < 1e-6);
  CHECK(grad_check([&] { return huber_masked_mean(p, g, mask, 0.1); }, {p, g}) < 1e-5);

  Tensor targets({3, 3});
  for (int i = 0; i < 9; ++i) targets[i] = (i % 3 == 0) ? 1.0 : 0.0;
  CHECK(grad_check([&] { return bce_logits_mean(p, targets); }, {p}) < 1e-7);
}

TEST_CASE("backward accumulates across repeated uses") {
  auto x = param(Tensor::scalar(3.0));
  auto y = add(mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1 = 7
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("adam reduces a quadratic") {
  Rng rng(31);
  auto x = param(rng.gaussian_tensor({8}, 1.0));
  nn::ParamMap pm;
  pm.add("x", x);
  Adam opt(pm, 0.05);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto loss = mean(square(x));
    if (i == 0) first = loss->val[0];
    last = loss->val[0];
    backward(loss);
    opt.step();
  }
  CHECK(last < first * 0.01);
}

TEST_CASE("clamp passes gradient only inside the interval") {
  auto x = param(Tensor::from({3}, {-2.0, 0.3, 2.0}));
  auto y = sum(clamp(x, -1.0, 1.0));
  backward(y);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
  CHECK(x->grad[2] == 0.0);
}

TEST_CASE("safe_rnorm_rows normalizes and gradchecks") {
  Rng rng(37);
  auto x = rand_param(rng, {4, 3});
  auto y = safe_rnorm_rows(x, 1e-12);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += y->val[r * 3 + c] * y->val[r * 3 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(grad_check([&] { return sum(mul(safe_rnorm_rows(x, 1e-12),
                                        constant(Tensor({4, 3}, 0.3)))); },
                   {x}) < 1e-6);
}
