#include "seg/metrics.hpp"

#include "seg/datagen.hpp"
#include "seg/error.hpp"

namespace seg::metrics {

Confusion::Confusion(int num_classes) : num_classes_(num_classes) {
  require(num_classes >= 1, ErrorKind::InvalidInput, "need at least one class");
  counts_.assign(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0);
}

std::int64_t Confusion::at(int gt, int pred) const {
  return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(num_classes_) +
                 static_cast<std::size_t>(pred)];
}

std::int64_t& Confusion::at(int gt, int pred) {
  return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(num_classes_) +
                 static_cast<std::size_t>(pred)];
}

void Confusion::accumulate(std::span<const std::uint8_t> pred_labels,
                           std::span<const std::uint8_t> gt_labels) {
  require(pred_labels.size() == gt_labels.size(), ErrorKind::InvalidShape,
          "prediction and ground-truth grids differ in size");
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    const std::uint8_t gt = gt_labels[i];
    if (gt == datagen::kIgnoreLabel) continue;
    const std::uint8_t pred = pred_labels[i];
    require(gt < num_classes_, ErrorKind::InvalidLabel,
            "ground-truth label " + std::to_string(gt) + " out of range");
    require(pred < num_classes_, ErrorKind::InvalidLabel,
            "predicted label " + std::to_string(pred) + " out of range");
    ++at(gt, pred);
  }
}

void Confusion::merge(const Confusion& other) {
  require(other.num_classes_ == num_classes_, ErrorKind::InvalidInput,
          "cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t Confusion::total() const {
  std::int64_t sum = 0;
  for (std::int64_t c : counts_) sum += c;
  return sum;
}

IoUReport miou(const Confusion& confusion) {
  const int classes = confusion.num_classes();
  IoUReport report;
  report.per_class_iou.assign(static_cast<std::size_t>(classes), std::nullopt);
  report.present_classes.assign(static_cast<std::size_t>(classes), false);
  report.pixel_counts.assign(static_cast<std::size_t>(classes), 0);

  double total_iou = 0.0;
  int evaluated = 0;
  for (int y = 0; y < classes; ++y) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int c = 0; c < classes; ++c) {
      row += confusion.at(y, c);
      col += confusion.at(c, y);
    }
    report.pixel_counts[static_cast<std::size_t>(y)] = row;
    const std::int64_t tp = confusion.at(y, y);
    const std::int64_t unions = row + col - tp;  // TP + FP + FN
    if (unions == 0) continue;                   // absent class, excluded
    report.present_classes[static_cast<std::size_t>(y)] = true;
    const double iou = static_cast<double>(tp) / static_cast<double>(unions);
    report.per_class_iou[static_cast<std::size_t>(y)] = iou;
    total_iou += iou;
    ++evaluated;
  }
  require(evaluated > 0, ErrorKind::EmptyEvaluation,
          "no class is present in ground truth or prediction");
  report.miou = total_iou / evaluated;
  return report;
}

nlohmann::json IoUReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& iou : per_class_iou) {
    if (iou.has_value()) {
      per_class.push_back(*iou);
    } else {
      per_class.push_back(nullptr);
    }
  }
  return {
      {"per_class_iou", per_class},
      {"miou", miou},
      {"present_classes", present_classes},
      {"pixel_counts", pixel_counts},
  };
}

}  // namespace seg::metrics
