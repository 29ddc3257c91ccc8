#include "seg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seg/error.hpp"

namespace seg {

namespace {

std::size_t checked_volume(const std::vector<std::size_t>& shape) {
  std::size_t volume = 1;
  for (std::size_t extent : shape) {
    require(extent > 0, ErrorKind::InvalidShape, "tensor extents must be positive");
    volume *= extent;
  }
  return volume;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(checked_volume(shape_) == data_.size(), ErrorKind::InvalidShape,
          "tensor data length does not match shape volume");
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::last_extent() const {
  require(!shape_.empty(), ErrorKind::InvalidShape,
          "operation requires a tensor with at least one axis");
  return shape_.back();
}

std::size_t Tensor::slice_count() const { return size() / last_extent(); }

void Tensor::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor softmax(const Tensor& logits) {
  const std::size_t classes = logits.last_extent();
  const std::size_t slices = logits.slice_count();
  Tensor out(logits.shape());
  const double* in = logits.data();
  double* p = out.data();
  for (std::size_t s = 0; s < slices; ++s, in += classes, p += classes) {
    double peak = in[0];
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(in[c] - peak);
      total += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= total;
  }
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  const std::size_t classes = logits.last_extent();
  const std::size_t slices = logits.slice_count();
  Tensor out(logits.shape());
  const double* in = logits.data();
  double* lp = out.data();
  for (std::size_t s = 0; s < slices; ++s, in += classes, lp += classes) {
    double peak = in[0];
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(in[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) lp[c] = in[c] - lse;
  }
  return out;
}

double grad_check(const std::function<double(const Tensor&)>& f,
                  const Tensor& point, const Tensor& analytic_grad,
                  double eps) {
  require(eps > 0.0, ErrorKind::InvalidInput, "grad_check eps must be positive");
  require(point.same_shape(analytic_grad), ErrorKind::InvalidShape,
          "analytic gradient shape does not match the evaluation point");

  Tensor probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + eps;
    const double above = f(probe);
    probe[i] = original - eps;
    const double below = f(probe);
    probe[i] = original;
    require(std::isfinite(above) && std::isfinite(below), ErrorKind::Numeric,
            "grad_check objective returned a non-finite value");
    const double estimate = (above - below) / (2.0 * eps);
    const double denom = std::max(1.0, std::abs(analytic_grad[i]));
    worst = std::max(worst, std::abs(estimate - analytic_grad[i]) / denom);
  }
  return worst;
}

}  // namespace seg
