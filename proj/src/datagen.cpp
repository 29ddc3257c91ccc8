#include "seg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "seg/binio.hpp"
#include "seg/error.hpp"
#include "seg/parallel.hpp"
#include "seg/rng.hpp"

namespace seg::datagen {

namespace {

// Feature geometry: class prototypes sit on a sphere of this radius, each
// video shifts them by a shared offset, and frame_jitter adds per-pixel noise.
constexpr double kPrototypeScale = 2.0;
constexpr double kVideoOffsetScale = 0.3;

// Stream ids for mix_seed; one layout stream and one feature stream per video.
constexpr std::uint64_t kPrototypeStream = 0;
std::uint64_t layout_stream(int video) { return 2 + 2 * static_cast<std::uint64_t>(video); }
std::uint64_t feature_stream(int video) { return 3 + 2 * static_cast<std::uint64_t>(video); }

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> class_prototypes(const DatasetConfig& config) {
  Rng rng(mix_seed(config.seed, kPrototypeStream));
  const std::size_t dim = static_cast<std::size_t>(config.feature_dim);
  std::vector<double> protos(static_cast<std::size_t>(config.num_classes) * dim);
  for (int c = 0; c < config.num_classes; ++c) {
    double* p = protos.data() + static_cast<std::size_t>(c) * dim;
    double norm_sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      p[d] = rng.next_gaussian();
      norm_sq += p[d] * p[d];
    }
    const double scale = kPrototypeScale / std::max(std::sqrt(norm_sq), 1e-12);
    for (std::size_t d = 0; d < dim; ++d) p[d] *= scale;
  }
  return protos;
}

}  // namespace

void DatasetConfig::validate() const {
  require(num_classes >= 2 && num_classes <= 254, ErrorKind::Config,
          "num_classes must be in [2, 254]");
  require(feature_dim >= 1, ErrorKind::Config, "feature_dim must be >= 1");
  require(num_videos >= 1, ErrorKind::Config, "num_videos must be >= 1");
  require(frames_per_video >= 1, ErrorKind::Config, "frames_per_video must be >= 1");
  require(height >= 2 && width >= 2, ErrorKind::Config, "height and width must be >= 2");
  require(zipf_exponent >= 0.0, ErrorKind::Config, "zipf_exponent must be >= 0");
  require(frame_jitter >= 0.0, ErrorKind::Config, "frame_jitter must be >= 0");
}

nlohmann::json DatasetConfig::to_json() const {
  return {
      {"num_classes", num_classes},
      {"feature_dim", feature_dim},
      {"num_videos", num_videos},
      {"frames_per_video", frames_per_video},
      {"height", height},
      {"width", width},
      {"zipf_exponent", zipf_exponent},
      {"frame_jitter", frame_jitter},
      {"seed", seed},
  };
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "num_classes", "feature_dim",   "num_videos", "frames_per_video", "height",
      "width",       "zipf_exponent", "frame_jitter", "seed",
  };
  require(j.is_object(), ErrorKind::Config, "dataset config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) > 0, ErrorKind::Config,
            "unknown dataset config key: " + key);
  }
  DatasetConfig cfg;
  try {
    if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<int>();
    if (j.contains("feature_dim")) cfg.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("num_videos")) cfg.num_videos = j.at("num_videos").get<int>();
    if (j.contains("frames_per_video")) {
      cfg.frames_per_video = j.at("frames_per_video").get<int>();
    }
    if (j.contains("height")) cfg.height = j.at("height").get<int>();
    if (j.contains("width")) cfg.width = j.at("width").get<int>();
    if (j.contains("zipf_exponent")) {
      cfg.zipf_exponent = j.at("zipf_exponent").get<double>();
    }
    if (j.contains("frame_jitter")) cfg.frame_jitter = j.at("frame_jitter").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string("bad dataset config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

int sites_per_video(const DatasetConfig& config) {
  const int area = config.height * config.width;
  return std::clamp(area / 32, 4, 64);
}

std::vector<double> zipf_masses(int num_classes, double exponent) {
  std::vector<double> masses(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    masses[static_cast<std::size_t>(c)] = std::pow(static_cast<double>(c + 1), -exponent);
    total += masses[static_cast<std::size_t>(c)];
  }
  for (double& m : masses) m /= total;
  return masses;
}

VideoLayout layout_for_video(const DatasetConfig& config, int video_index) {
  config.validate();
  require(video_index >= 0 && video_index < config.num_videos, ErrorKind::InvalidInput,
          "video index out of range");

  Rng rng(mix_seed(config.seed, layout_stream(video_index)));
  const int sites = sites_per_video(config);

  VideoLayout layout;
  layout.site_rows.resize(static_cast<std::size_t>(sites));
  layout.site_cols.resize(static_cast<std::size_t>(sites));
  layout.cell_classes.resize(static_cast<std::size_t>(sites));

  for (int s = 0; s < sites; ++s) {
    layout.site_rows[static_cast<std::size_t>(s)] = rng.next_double() * config.height;
    layout.site_cols[static_cast<std::size_t>(s)] = rng.next_double() * config.width;
  }

  std::vector<double> cdf = zipf_masses(config.num_classes, config.zipf_exponent);
  for (std::size_t c = 1; c < cdf.size(); ++c) cdf[c] += cdf[c - 1];
  for (int s = 0; s < sites; ++s) {
    const double u = rng.next_double();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const auto cls = std::min<std::size_t>(
        static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    layout.cell_classes[static_cast<std::size_t>(s)] = static_cast<int>(cls);
  }

  // Nearest site wins; ties resolve to the lowest site index.
  layout.labels.resize(config.pixels_per_frame());
  for (int r = 0; r < config.height; ++r) {
    for (int c = 0; c < config.width; ++c) {
      const double py = r + 0.5;
      const double px = c + 0.5;
      int best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (int s = 0; s < sites; ++s) {
        const double dy = py - layout.site_rows[static_cast<std::size_t>(s)];
        const double dx = px - layout.site_cols[static_cast<std::size_t>(s)];
        const double dist = dy * dy + dx * dx;
        if (dist < best_dist) {
          best_dist = dist;
          best = s;
        }
      }
      layout.labels[static_cast<std::size_t>(r * config.width + c)] =
          static_cast<std::uint8_t>(layout.cell_classes[static_cast<std::size_t>(best)]);
    }
  }
  return layout;
}

Dataset generate(const DatasetConfig& config) {
  config.validate();

  const std::vector<double> protos = class_prototypes(config);
  const std::size_t dim = static_cast<std::size_t>(config.feature_dim);
  const std::size_t pixels = config.pixels_per_frame();

  Dataset dataset;
  dataset.config = config;
  dataset.split = "all";
  dataset.videos.resize(static_cast<std::size_t>(config.num_videos));

  parallel_for(static_cast<std::size_t>(config.num_videos), [&](std::size_t v) {
    const VideoLayout layout = layout_for_video(config, static_cast<int>(v));
    Rng rng(mix_seed(config.seed, feature_stream(static_cast<int>(v))));

    std::vector<double> offset(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      offset[d] = rng.next_gaussian() * kVideoOffsetScale;
    }

    Video& video = dataset.videos[v];
    video.frames.resize(static_cast<std::size_t>(config.frames_per_video));
    for (Frame& frame : video.frames) {
      frame.labels = layout.labels;
      frame.features = Tensor({static_cast<std::size_t>(config.height),
                               static_cast<std::size_t>(config.width), dim});
      double* feat = frame.features.data();
      for (std::size_t p = 0; p < pixels; ++p) {
        const double* proto = protos.data() + frame.labels[p] * dim;
        for (std::size_t d = 0; d < dim; ++d) {
          const double value =
              proto[d] + offset[d] + config.frame_jitter * rng.next_gaussian();
          // Values are kept exactly representable in f32 so a dataset and its
          // SSEG file carry identical numbers.
          feat[p * dim + d] = quantize_f32(value);
        }
      }
    }
  });

  return dataset;
}

ClassPrior compute_prior(const Dataset& dataset) {
  const int num_classes = dataset.config.num_classes;
  ClassPrior prior;
  prior.pixel_counts.assign(static_cast<std::size_t>(num_classes), 0);
  prior.video_counts.assign(static_cast<std::size_t>(num_classes), 0);

  std::int64_t total = 0;
  for (const Video& video : dataset.videos) {
    std::set<int> seen;
    for (const Frame& frame : video.frames) {
      for (std::uint8_t label : frame.labels) {
        if (label == kIgnoreLabel) continue;
        require(label < num_classes, ErrorKind::InvalidLabel,
                "label " + std::to_string(label) + " out of range");
        ++prior.pixel_counts[label];
        ++total;
        seen.insert(label);
      }
    }
    for (int cls : seen) ++prior.video_counts[static_cast<std::size_t>(cls)];
  }
  require(total > 0, ErrorKind::EmptyData,
          "cannot compute a class prior from an all-ignore dataset");

  prior.pi.resize(static_cast<std::size_t>(num_classes));
  const double denom = static_cast<double>(total + num_classes);
  for (int c = 0; c < num_classes; ++c) {
    prior.pi[static_cast<std::size_t>(c)] =
        static_cast<double>(prior.pixel_counts[static_cast<std::size_t>(c)] + 1) / denom;
  }
  return prior;
}

std::array<Dataset, 3> split_dataset(const Dataset& dataset, double train_frac,
                                     double val_frac) {
  const int n = static_cast<int>(dataset.videos.size());
  require(n >= 3, ErrorKind::Config, "need at least 3 videos to split");
  require(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0,
          ErrorKind::Config, "split fractions must be positive and sum below 1");

  int n_train = static_cast<int>(std::llround(train_frac * n));
  n_train = std::clamp(n_train, 1, n - 2);
  int n_val = static_cast<int>(std::llround(val_frac * n));
  n_val = std::clamp(n_val, 1, n - n_train - 1);

  std::array<Dataset, 3> parts;
  const char* names[3] = {"train", "val", "test"};
  const int bounds[4] = {0, n_train, n_train + n_val, n};
  for (int part = 0; part < 3; ++part) {
    Dataset& out = parts[static_cast<std::size_t>(part)];
    out.config = dataset.config;
    out.split = names[part];
    out.videos.assign(dataset.videos.begin() + bounds[part],
                      dataset.videos.begin() + bounds[part + 1]);
    out.config.num_videos = bounds[part + 1] - bounds[part];
  }
  return parts;
}

void save_sseg(const Dataset& dataset, const std::filesystem::path& path) {
  const DatasetConfig& cfg = dataset.config;
  require(static_cast<int>(dataset.videos.size()) == cfg.num_videos, ErrorKind::InvalidInput,
          "dataset video count does not match its config");

  nlohmann::json header = {
      {"L", cfg.num_classes},
      {"D", cfg.feature_dim},
      {"num_videos", cfg.num_videos},
      {"frames_per_video", cfg.frames_per_video},
      {"H", cfg.height},
      {"W", cfg.width},
      {"s", cfg.zipf_exponent},
      {"frame_jitter", cfg.frame_jitter},
      {"seed", cfg.seed},
      {"split", dataset.split},
  };

  std::ofstream out = binio::open_output(path);
  binio::write_header(out, "SSEG", 1, header);
  for (const Video& video : dataset.videos) {
    require(static_cast<int>(video.frames.size()) == cfg.frames_per_video,
            ErrorKind::InvalidInput, "video frame count does not match config");
    for (const Frame& frame : video.frames) {
      binio::write_f32_block(out, frame.features.values());
      binio::write_bytes(out, frame.labels);
    }
  }
}

Dataset load_sseg(const std::filesystem::path& path) {
  std::ifstream in = binio::open_input(path);
  const nlohmann::json header = binio::read_header(in, "SSEG", 1, "SSEG");

  Dataset dataset;
  DatasetConfig& cfg = dataset.config;
  try {
    cfg.num_classes = header.at("L").get<int>();
    cfg.feature_dim = header.at("D").get<int>();
    cfg.num_videos = header.at("num_videos").get<int>();
    cfg.frames_per_video = header.at("frames_per_video").get<int>();
    cfg.height = header.at("H").get<int>();
    cfg.width = header.at("W").get<int>();
    cfg.zipf_exponent = header.at("s").get<double>();
    cfg.frame_jitter = header.at("frame_jitter").get<double>();
    cfg.seed = header.at("seed").get<std::uint64_t>();
    dataset.split = header.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Io, std::string("bad SSEG header: ") + e.what());
  }
  cfg.validate();

  const std::size_t pixels = cfg.pixels_per_frame();
  const std::size_t dim = static_cast<std::size_t>(cfg.feature_dim);
  dataset.videos.resize(static_cast<std::size_t>(cfg.num_videos));
  for (Video& video : dataset.videos) {
    video.frames.resize(static_cast<std::size_t>(cfg.frames_per_video));
    for (Frame& frame : video.frames) {
      frame.features = Tensor({static_cast<std::size_t>(cfg.height),
                               static_cast<std::size_t>(cfg.width), dim});
      binio::read_f32_block(in, frame.features.values(), "SSEG features");
      frame.labels.resize(pixels);
      binio::read_bytes(in, frame.labels, "SSEG labels");
      for (std::uint8_t label : frame.labels) {
        require(label == kIgnoreLabel || label < cfg.num_classes, ErrorKind::InvalidLabel,
                "SSEG label out of range");
      }
    }
  }
  return dataset;
}

}  // namespace seg::datagen
