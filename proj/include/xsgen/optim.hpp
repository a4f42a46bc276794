#pragma once

#include <cmath>
#include <unordered_set>
#include <vector>

#include "xsgen/nn.hpp"

namespace xsg {

// Adam with optional global-norm gradient clipping. Parameters whose Var
// pointer is in the frozen set keep their values (used for ablation gates).
class Adam {
 public:
  Adam(nn::ParamMap params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double clip_norm = 0.0)
      : params_(std::move(params)),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        clip_norm_(clip_norm) {
    for (const auto& [name, v] : params_.items) {
      m_.emplace_back(v->val.shape());
      v_.emplace_back(v->val.shape());
    }
  }

  void freeze(const ag::VarPtr& p) { frozen_.insert(p.get()); }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  // Applies one update from the accumulated gradients, then clears them.
  void step() {
    ++t_;
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
      double sq = 0.0;
      for (const auto& [name, p] : params_.items) {
        if (!p->grad.defined() || frozen_.count(p.get())) continue;
        for (int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
      }
      const double norm = std::sqrt(sq);
      if (norm > clip_norm_) scale = clip_norm_ / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params_.items.size(); ++pi) {
      auto& p = params_.items[pi].second;
      if (!p->grad.defined() || frozen_.count(p.get())) {
        p->clear_grad();
        continue;
      }
      Tensor& m = m_[pi];
      Tensor& v = v_[pi];
      for (int64_t i = 0; i < p->val.numel(); ++i) {
        const double g = p->grad[i] * scale;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p->val[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
      p->clear_grad();
    }
  }

  const nn::ParamMap& params() const { return params_; }

 private:
  nn::ParamMap params_;
  std::vector<Tensor> m_, v_;
  std::unordered_set<ag::Var*> frozen_;
  double lr_, beta1_, beta2_, eps_, clip_norm_;
  int64_t t_ = 0;
};

}  // namespace xsg
