#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seg/datagen.hpp"
#include "seg/model.hpp"
#include "seg/tensor.hpp"

namespace seg::losses {

struct LossOutput {
  double value = 0.0;
  Tensor grad_logits;
  std::size_t selected_count = 0;  // pixels the mean runs over
};

struct OhemConfig {
  double conf_threshold = 0.7;
  std::size_t min_keep = 0;

  void validate() const;
};

/// Mean of -log_softmax(logits)[label] over non-ignore pixels. The gradient is
/// (softmax - onehot)/count at contributing pixels and zero elsewhere.
LossOutput ce_loss(const Tensor& logits, std::span<const std::uint8_t> labels);

/// Selection mask over pixels: every valid pixel whose ground-truth softmax
/// probability falls below conf_threshold, topped up with the lowest-confidence
/// remaining pixels until min(min_keep, valid) are selected. Ties go to the
/// lower pixel index. Ignore pixels are never selected.
std::vector<std::uint8_t> ohem_select(std::span<const double> gt_probs,
                                      std::span<const std::uint8_t> labels,
                                      const OhemConfig& cfg);

/// ce_loss restricted to the ohem_select mask; the mean runs over selected
/// pixels only. With conf_threshold = 1 this reproduces ce_loss bit for bit.
LossOutput ohem_ce_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                        const OhemConfig& cfg);

struct LaCeOutput {
  double value = 0.0;
  std::size_t selected_count = 0;
  Tensor grad_logits;
  model::HeadGrads grads;  // dw2 and dfeats through the cosine head
};

/// Cross entropy over train-mode cosine logits (prior bias included), with
/// gradients pushed through both norms of the cosine head.
LaCeOutput la_ce_loss(const model::ModelParams& params, const Tensor& feats,
                      const datagen::ClassPrior& prior,
                      std::span<const std::uint8_t> labels);

/// Mean over pixels of KL(teacher ‖ student) between softmax(logits / T).
/// The teacher is constant; the student gradient is (p_S - p_T) / (T * count).
/// Identical logits give exactly zero value and gradient.
LossOutput distill_kl(const Tensor& student_logits, const Tensor& teacher_logits,
                      double temperature);

}  // namespace seg::losses
