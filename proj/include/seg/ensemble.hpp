#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seg/model.hpp"
#include "seg/tensor.hpp"

namespace seg::ensemble {

/// Per-frame class probabilities. Pre-fusion maps sum to 1 per pixel; fused
/// maps are unnormalized scores and only their argmax is meaningful.
struct PredictionMap {
  Tensor probs;  // [H, W, L]
  std::string frame_id;
  std::string model_id;
  bool fused = false;
};

struct GroupSpec {
  std::vector<std::string> strong;
  std::vector<std::string> weak;
  std::vector<std::string> aux;

  void validate() const;  // strong nonempty, groups disjoint
};

struct FusionWeights {
  double alpha = 1.4;
  double beta = 1.0;

  void validate() const;
};

/// Plain per-frame prediction: infer-mode logits, softmax, one per-pixel
/// renormalization. Every public prediction path ends with the same
/// renormalization step so TTA with trivial settings is bit-identical.
PredictionMap predict_frame(const model::ModelParams& params, const Tensor& features,
                            std::string frame_id, std::string model_id);

/// Corner-aligned bilinear resize of an [H, W, C] tensor. Returns a copy when
/// the target equals the source size.
Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w);

/// Mirror the W axis of an [H, W, C] tensor.
Tensor flip_horizontal(const Tensor& src);

/// Multi-scale and flip test-time augmentation. Each variant resizes features
/// to (ceil(s*H), ceil(s*W)), predicts, and resizes the probabilities back;
/// flipped variants mirror the input and mirror the result. Variants are
/// averaged and renormalized per pixel.
PredictionMap tta_predict(const model::ModelParams& params, const Tensor& features,
                          std::string frame_id, std::string model_id,
                          std::span<const double> scales, bool flip);

/// Element-wise mean over maps of one frame. Coordinates are summed pairwise
/// over sorted values, so the result does not depend on input order.
PredictionMap group_average(const std::vector<PredictionMap>& maps);

/// P_Final = P_S + alpha * P_W + beta * P_A, element-wise, no renormalization.
PredictionMap fuse(const PredictionMap& strong, const PredictionMap& weak,
                   const PredictionMap& aux, const FusionWeights& weights);

/// Per-pixel argmax over the class axis; ties go to the lower class index.
std::vector<std::uint8_t> argmax_labels(const Tensor& probs);

/// One validation frame with its three group-averaged maps and ground truth.
struct FrameEnsemble {
  PredictionMap strong;
  PredictionMap weak;
  PredictionMap aux;
  std::vector<std::uint8_t> labels;
};

struct GridSearchResult {
  FusionWeights best;
  double best_miou = 0.0;
  std::vector<double> alpha_grid;
  std::vector<double> beta_grid;
  std::vector<std::vector<double>> miou_table;  // [alpha index][beta index]

  nlohmann::json to_json() const;
};

/// Evaluates fused mIoU over all frames for every (alpha, beta) pair. Grids are
/// sorted ascending and deduplicated; ties on mIoU go to the smaller alpha,
/// then the smaller beta.
GridSearchResult grid_search(const std::vector<FrameEnsemble>& frames,
                             std::vector<double> alpha_grid,
                             std::vector<double> beta_grid);

// PMAP container: "PMAP" magic, JSON header {frame_id, H, W, L, model_id,
// fused}, then row-major little-endian f32 probabilities.
void save_pmap(const PredictionMap& map, const std::filesystem::path& path);
PredictionMap load_pmap(const std::filesystem::path& path);

}  // namespace seg::ensemble
