#include "seg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seg/error.hpp"

namespace seg::losses {

namespace {

constexpr std::uint8_t kIgnore = datagen::kIgnoreLabel;

// Shared core: mask == nullptr means "every valid pixel".
LossOutput ce_masked(const Tensor& logits, std::span<const std::uint8_t> labels,
                     const std::vector<std::uint8_t>* mask) {
  const std::size_t classes = logits.last_extent();
  const std::size_t pixels = logits.slice_count();
  require(labels.size() == pixels, ErrorKind::InvalidShape,
          "label count does not match the logit grid");
  require(classes >= 2, ErrorKind::InvalidShape, "need at least two classes");

  LossOutput out;
  out.grad_logits = Tensor(logits.shape());

  std::size_t count = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint8_t label = labels[p];
    if (label == kIgnore) continue;
    require(label < classes, ErrorKind::InvalidLabel,
            "label " + std::to_string(label) + " out of range");
    if (mask != nullptr && (*mask)[p] == 0) continue;
    ++count;
  }
  require(count > 0, ErrorKind::EmptySelection,
          "no pixels contribute to the loss");

  const double* z = logits.data();
  double* g = out.grad_logits.data();
  double total = 0.0;
  const double inv_count = 1.0 / static_cast<double>(count);
  for (std::size_t p = 0; p < pixels; ++p, z += classes, g += classes) {
    const std::uint8_t label = labels[p];
    if (label == kIgnore) continue;
    if (mask != nullptr && (*mask)[p] == 0) continue;
    double max_z = z[0];
    for (std::size_t y = 1; y < classes; ++y) max_z = std::max(max_z, z[y]);
    double sum_exp = 0.0;
    for (std::size_t y = 0; y < classes; ++y) sum_exp += std::exp(z[y] - max_z);
    const double log_sum = std::log(sum_exp);
    total += -(z[label] - max_z - log_sum);
    for (std::size_t y = 0; y < classes; ++y) {
      g[y] = std::exp(z[y] - max_z) / sum_exp * inv_count;
    }
    g[label] -= inv_count;
  }

  out.value = total * inv_count;
  out.selected_count = count;
  require(std::isfinite(out.value), ErrorKind::Numeric,
          "cross entropy is not finite");
  return out;
}

// Softmax probability of each pixel's own label; ignore pixels get 0.
std::vector<double> ground_truth_probs(const Tensor& logits,
                                       std::span<const std::uint8_t> labels) {
  const std::size_t classes = logits.last_extent();
  const std::size_t pixels = logits.slice_count();
  std::vector<double> probs(pixels, 0.0);
  const double* z = logits.data();
  for (std::size_t p = 0; p < pixels; ++p, z += classes) {
    const std::uint8_t label = labels[p];
    if (label == kIgnore) continue;
    require(label < classes, ErrorKind::InvalidLabel,
            "label " + std::to_string(label) + " out of range");
    double max_z = z[0];
    for (std::size_t y = 1; y < classes; ++y) max_z = std::max(max_z, z[y]);
    double sum_exp = 0.0;
    for (std::size_t y = 0; y < classes; ++y) sum_exp += std::exp(z[y] - max_z);
    probs[p] = std::exp(z[label] - max_z) / sum_exp;
  }
  return probs;
}

}  // namespace

void OhemConfig::validate() const {
  require(conf_threshold > 0.0 && conf_threshold <= 1.0, ErrorKind::Config,
          "conf_threshold must lie in (0, 1]");
}

LossOutput ce_loss(const Tensor& logits, std::span<const std::uint8_t> labels) {
  return ce_masked(logits, labels, nullptr);
}

std::vector<std::uint8_t> ohem_select(std::span<const double> gt_probs,
                                      std::span<const std::uint8_t> labels,
                                      const OhemConfig& cfg) {
  cfg.validate();
  require(gt_probs.size() == labels.size(), ErrorKind::InvalidShape,
          "probability and label counts differ");

  const std::size_t n = labels.size();
  std::vector<std::uint8_t> mask(n, 0);
  std::vector<std::size_t> valid;
  std::size_t selected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnore) continue;
    valid.push_back(i);
    if (gt_probs[i] < cfg.conf_threshold) {
      mask[i] = 1;
      ++selected;
    }
  }

  const std::size_t target = std::min(cfg.min_keep, valid.size());
  if (selected < target) {
    std::vector<std::size_t> rest;
    for (std::size_t i : valid) {
      if (mask[i] == 0) rest.push_back(i);
    }
    // stable sort keeps the index-ascending tie-break for equal probabilities
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
      return gt_probs[a] < gt_probs[b];
    });
    for (std::size_t i : rest) {
      if (selected >= target) break;
      mask[i] = 1;
      ++selected;
    }
  }
  return mask;
}

LossOutput ohem_ce_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                        const OhemConfig& cfg) {
  const std::vector<double> probs = ground_truth_probs(logits, labels);
  const std::vector<std::uint8_t> mask = ohem_select(probs, labels, cfg);
  return ce_masked(logits, labels, &mask);
}

LaCeOutput la_ce_loss(const model::ModelParams& params, const Tensor& feats,
                      const datagen::ClassPrior& prior,
                      std::span<const std::uint8_t> labels) {
  require(params.head_kind == model::HeadKind::CosineLa, ErrorKind::Usage,
          "la_ce_loss requires a cosine_la head");
  const Tensor logits =
      model::head_cosine_la(params, feats, &prior, model::HeadMode::Train);
  LossOutput ce = ce_loss(logits, labels);

  LaCeOutput out;
  out.value = ce.value;
  out.selected_count = ce.selected_count;
  out.grads = model::head_cosine_vjp(params, feats, ce.grad_logits);
  out.grad_logits = std::move(ce.grad_logits);
  return out;
}

LossOutput distill_kl(const Tensor& student_logits, const Tensor& teacher_logits,
                      double temperature) {
  require(student_logits.same_shape(teacher_logits), ErrorKind::InvalidShape,
          "student and teacher logit shapes differ");
  require(temperature > 0.0, ErrorKind::Config, "temperature must be > 0");

  const std::size_t classes = student_logits.last_extent();
  const std::size_t pixels = student_logits.slice_count();
  const double inv_t = 1.0 / temperature;
  const double inv_count = 1.0 / static_cast<double>(pixels);

  LossOutput out;
  out.grad_logits = Tensor(student_logits.shape());
  out.selected_count = pixels;

  std::vector<double> log_ps(classes);
  std::vector<double> log_pt(classes);
  const double* zs = student_logits.data();
  const double* zt = teacher_logits.data();
  double* g = out.grad_logits.data();
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p, zs += classes, zt += classes, g += classes) {
    auto log_softmax_row = [&](const double* z, std::vector<double>& dst) {
      double max_z = z[0] * inv_t;
      for (std::size_t y = 1; y < classes; ++y) max_z = std::max(max_z, z[y] * inv_t);
      double sum_exp = 0.0;
      for (std::size_t y = 0; y < classes; ++y) sum_exp += std::exp(z[y] * inv_t - max_z);
      const double log_sum = std::log(sum_exp);
      for (std::size_t y = 0; y < classes; ++y) dst[y] = z[y] * inv_t - max_z - log_sum;
    };
    log_softmax_row(zs, log_ps);
    log_softmax_row(zt, log_pt);
    for (std::size_t y = 0; y < classes; ++y) {
      const double pt = std::exp(log_pt[y]);
      const double ps = std::exp(log_ps[y]);
      // identical logits make (log_pt - log_ps) exactly zero, so the value is 0
      total += pt * (log_pt[y] - log_ps[y]);
      g[y] = (ps - pt) * inv_t * inv_count;
    }
  }

  out.value = total * inv_count;
  require(std::isfinite(out.value), ErrorKind::Numeric, "KL value is not finite");
  return out;
}

}  // namespace seg::losses
