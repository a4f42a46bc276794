#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "xsgen/common.hpp"

namespace xsg {

// Dense row-major double tensor. Storage is shared so reshapes are free;
// all ops that write allocate fresh storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    store_ = std::make_shared<std::vector<double>>(numel_of(shape_), 0.0);
  }
  Tensor(std::vector<int64_t> shape, double fill) : Tensor(std::move(shape)) {
    std::fill(store_->begin(), store_->end(), fill);
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    XSG_CHECK_SHAPE(static_cast<int64_t>(data.size()) == numel_of(t.shape_),
                    "Tensor::from: data size does not match shape");
    t.store_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }
  static Tensor scalar(double v) { return from({1}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return numel_of(shape_); }
  bool defined() const { return store_ != nullptr; }

  double* data() { return store_->data(); }
  const double* data() const { return store_->data(); }
  double& operator[](int64_t i) { return (*store_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*store_)[static_cast<size_t>(i)]; }

  // Shares storage; only the shape changes.
  Tensor reshaped(std::vector<int64_t> shape) const {
    XSG_CHECK_SHAPE(numel_of(shape) == numel(), "reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = store_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.store_ = std::make_shared<std::vector<double>>(*store_);
    return t;
  }

  void fill(double v) { std::fill(store_->begin(), store_->end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double max_abs() const {
    double m = 0.0;
    for (double v : *store_) m = std::max(m, std::fabs(v));
    return m;
  }
  bool all_finite() const {
    for (double v : *store_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      XSG_CHECK_SHAPE(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<double>> store_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.same_shape(b); }

}  // namespace xsg
