#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "xsgen/autograd.hpp"
#include "xsgen/nn.hpp"

namespace xsg::testutil {

// Central-difference gradient check against the analytic gradients collected
// on the given parameters. Returns the worst relative error over all checked
// entries; entries where both gradients are tiny are compared absolutely.
inline double grad_check(const std::function<ag::VarPtr()>& make_loss,
                         const std::vector<ag::VarPtr>& params, double step = 1e-5,
                         int max_entries_per_param = 16) {
  for (const auto& p : params) p->clear_grad();
  auto loss = make_loss();
  ag::backward(loss);

  double worst = 0.0;
  for (const auto& p : params) {
    const int64_t n = p->val.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_entries_per_param);
    for (int64_t i = 0; i < n; i += stride) {
      const double orig = p->val[i];
      p->val[i] = orig + step;
      const double lp = make_loss()->val[0];
      p->val[i] = orig - step;
      const double lm = make_loss()->val[0];
      p->val[i] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = p->grad.defined() ? p->grad[i] : 0.0;
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  for (const auto& p : params) p->clear_grad();
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace xsg::testutil
