#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace seg {

/// Dense row-major tensor of 64-bit reals with an explicit shape.
///
/// This is the minimal carrier the rest of the library needs: flat storage,
/// positive extents, last-axis class operations. No broadcasting, no views.
/// Tensors are treated as immutable values once handed to an operation.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Extent of the last axis; throws invalid-shape on rank-0 tensors.
  std::size_t last_extent() const;

  // Number of slices along the last axis (product of leading extents).
  std::size_t slice_count() const;

  void fill(double value);
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Softmax over the last axis, computed with max-subtraction so that large
/// logits do not overflow. Every output slice is a probability vector.
Tensor softmax(const Tensor& logits);

/// logits - logsumexp(logits) per last-axis slice; exp of the result matches
/// softmax to high precision.
Tensor log_softmax(const Tensor& logits);

/// Central finite-difference check of an analytic gradient.
///
/// Perturbs each coordinate of `point` by +/-eps, evaluates `f`, and returns
/// the maximum over coordinates of
///   |central_difference - analytic| / max(1, |analytic|).
/// Non-finite evaluations of `f` raise a numeric error.
double grad_check(const std::function<double(const Tensor&)>& f,
                  const Tensor& point, const Tensor& analytic_grad,
                  double eps = 1e-5);

}  // namespace seg
