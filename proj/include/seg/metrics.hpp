#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace seg::metrics {

/// Pixel-level confusion matrix, rows = ground truth, cols = prediction.
/// Accumulation is plain integer addition, so per-frame tallies merge in any
/// order without changing the result.
class Confusion {
 public:
  explicit Confusion(int num_classes);

  int num_classes() const { return num_classes_; }

  std::int64_t at(int gt, int pred) const;
  std::int64_t& at(int gt, int pred);

  // Counts every non-ignore pixel; labels at or above num_classes are errors.
  void accumulate(std::span<const std::uint8_t> pred_labels,
                  std::span<const std::uint8_t> gt_labels);

  void merge(const Confusion& other);

  std::int64_t total() const;

 private:
  int num_classes_;
  std::vector<std::int64_t> counts_;
};

struct IoUReport {
  std::vector<std::optional<double>> per_class_iou;  // empty for absent classes
  double miou = 0.0;
  std::vector<bool> present_classes;       // class appears in GT or prediction
  std::vector<std::int64_t> pixel_counts;  // ground-truth pixels per class

  nlohmann::json to_json() const;
};

/// Per-class IoU_y = TP / (TP + FP + FN); classes absent from both ground
/// truth and prediction are excluded from the mean.
IoUReport miou(const Confusion& confusion);

}  // namespace seg::metrics
