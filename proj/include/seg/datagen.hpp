#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "seg/tensor.hpp"

namespace seg::datagen {

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct DatasetConfig {
  int num_classes = 20;
  int feature_dim = 8;
  int num_videos = 60;
  int frames_per_video = 4;
  int height = 24;
  int width = 24;
  double zipf_exponent = 1.5;   // 0 means uniform class frequencies
  double frame_jitter = 0.5;    // per-pixel feature noise scale within a video
  std::uint64_t seed = 0;

  std::size_t pixels_per_frame() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }

  // Throws a config error on out-of-range fields (L in [2, 254], H/W >= 2, ...).
  void validate() const;

  nlohmann::json to_json() const;
  // Rejects unknown keys; absent keys keep their defaults.
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct Frame {
  Tensor features;                   // [H, W, D]
  std::vector<std::uint8_t> labels;  // H*W row-major, 255 = ignore
};

struct Video {
  std::vector<Frame> frames;
};

struct Dataset {
  DatasetConfig config;
  std::string split = "all";
  std::vector<Video> videos;

  std::size_t frame_count() const {
    return videos.size() * (videos.empty() ? 0 : videos.front().frames.size());
  }
};

/// Smoothed pixel-frequency class prior plus the raw per-class tallies.
struct ClassPrior {
  std::vector<double> pi;                  // add-one smoothed, sums to 1
  std::vector<std::int64_t> pixel_counts;  // non-ignore pixels per class
  std::vector<std::int64_t> video_counts;  // videos where the class appears
};

// Deterministic per-video layout: Voronoi cells of random sites, cell classes
// drawn from a Zipf distribution over class rank. Exposed separately from
// generate() so the raw class draws can be inspected.
struct VideoLayout {
  std::vector<double> site_rows;
  std::vector<double> site_cols;
  std::vector<int> cell_classes;
  std::vector<std::uint8_t> labels;  // H*W, shared by every frame of the video
};

VideoLayout layout_for_video(const DatasetConfig& config, int video_index);

// Number of Voronoi sites per video for the given frame geometry.
int sites_per_video(const DatasetConfig& config);

// Zipf probability masses over classes, rank 0 = head class.
std::vector<double> zipf_masses(int num_classes, double exponent);

/// Generates the full synthetic dataset. Deterministic given config.seed;
/// videos are independent streams, so generation parallelizes per video.
Dataset generate(const DatasetConfig& config);

/// Pixel-frequency prior with add-one smoothing:
///   pi_y = (pixel_count_y + 1) / (total + L).
/// video_counts is a diagnostic tally of videos containing each class.
ClassPrior compute_prior(const Dataset& dataset);

// Partitions by whole videos into "train" / "val" / "test" datasets.
// Fractions must leave at least one video per split.
std::array<Dataset, 3> split_dataset(const Dataset& dataset, double train_frac,
                                     double val_frac);

// SSEG container: "SSEG" magic, version, JSON header, then per frame
// f32 features and u8 labels. Features quantize to f32, so save -> load -> save
// reproduces the file byte for byte.
void save_sseg(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_sseg(const std::filesystem::path& path);

}  // namespace seg::datagen
