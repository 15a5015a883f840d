#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <type_traits>
#include <utility>

#include "indigo/common.hpp"

namespace indigo {

// Dense row-major tensor of arbitrary rank. A rank-0 tensor is a scalar and
// holds exactly one element (empty extent product). Element count always
// equals the product of the extents.
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

 public:
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(static_cast<Eigen::Index>(shape_numel(shape_)));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return full({}, v); }

  static Tensor from(Shape shape, std::initializer_list<S> vals) {
    Tensor t(std::move(shape));
    if (vals.size() != t.numel())
      throw ShapeError("Tensor::from: " + std::to_string(vals.size()) + " values for shape " +
                       shape_str(t.shape()));
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  static Tensor from(Shape shape, const std::vector<S>& vals) {
    Tensor t(std::move(shape));
    if (vals.size() != t.numel())
      throw ShapeError("Tensor::from: " + std::to_string(vals.size()) + " values for shape " +
                       shape_str(t.shape()));
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return static_cast<std::size_t>(data_.size()); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  Eigen::Map<Storage> array() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Storage> array() const { return {data_.data(), data_.size()}; }

  S& flat(std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  S flat(std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // Rank-specific accessors; rank is checked, indices are not.
  S& operator()(std::size_t c, std::size_t h, std::size_t w) {
    require_rank(3);
    return data_[static_cast<Eigen::Index>((c * shape_[1] + h) * shape_[2] + w)];
  }
  S operator()(std::size_t c, std::size_t h, std::size_t w) const {
    require_rank(3);
    return data_[static_cast<Eigen::Index>((c * shape_[1] + h) * shape_[2] + w)];
  }
  S& operator()(std::size_t i, std::size_t j) {
    require_rank(2);
    return data_[static_cast<Eigen::Index>(i * shape_[1] + j)];
  }
  S operator()(std::size_t i, std::size_t j) const {
    require_rank(2);
    return data_[static_cast<Eigen::Index>(i * shape_[1] + j)];
  }
  S& operator()(std::size_t i) {
    require_rank(1);
    return data_[static_cast<Eigen::Index>(i)];
  }
  S operator()(std::size_t i) const {
    require_rank(1);
    return data_[static_cast<Eigen::Index>(i)];
  }

  // Value of a single-element tensor (any rank).
  S value() const {
    if (numel() != 1)
      throw ShapeError("Tensor::value: tensor of shape " + shape_str(shape_) + " is not a scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Eigen::Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i])) return false;
    return true;
  }

 private:
  void require_rank(std::size_t r) const {
    if (shape_.size() != r)
      throw ShapeError("Tensor: rank-" + std::to_string(r) + " access on shape " + shape_str(shape_));
  }

  Shape shape_;
  Storage data_;
};

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename S>
double max_abs(const Tensor<S>& a) {
  if (a.numel() == 0) return 0.0;
  return static_cast<double>(a.array().abs().maxCoeff());
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "max_abs_diff");
  if (a.numel() == 0) return 0.0;
  return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(S)) == 0;
}

template <typename S>
Tensor<S> clip01(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  y.array() = x.array().cwiseMax(S(0)).cwiseMin(S(1));
  return y;
}

template <typename T, typename S>
Tensor<T> cast_tensor(const Tensor<S>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y.flat(i) = static_cast<T>(x.flat(i));
  return y;
}

}  // namespace indigo
