#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "seg/datagen.hpp"
#include "seg/error.hpp"

namespace dg = seg::datagen;
namespace fs = std::filesystem;

namespace {

dg::DatasetConfig small_config() {
  dg::DatasetConfig cfg;
  cfg.num_classes = 6;
  cfg.feature_dim = 4;
  cfg.num_videos = 5;
  cfg.frames_per_video = 3;
  cfg.height = 10;
  cfg.width = 12;
  cfg.zipf_exponent = 1.0;
  cfg.frame_jitter = 0.4;
  cfg.seed = 21;
  return cfg;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

fs::path temp_path(const char* name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("config validation bounds") {
  dg::DatasetConfig cfg = small_config();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), seg::Error);
  cfg = small_config();
  cfg.num_classes = 255;
  CHECK_THROWS_AS(cfg.validate(), seg::Error);
  cfg = small_config();
  cfg.height = 1;
  CHECK_THROWS_AS(cfg.validate(), seg::Error);
  cfg = small_config();
  cfg.zipf_exponent = -0.1;
  CHECK_THROWS_AS(cfg.validate(), seg::Error);
}

TEST_CASE("config json round trip rejects unknown keys") {
  const dg::DatasetConfig cfg = small_config();
  const auto parsed = dg::DatasetConfig::from_json(cfg.to_json());
  CHECK(parsed.to_json() == cfg.to_json());

  auto j = cfg.to_json();
  j["zpif_exponent"] = 2.0;
  CHECK_THROWS_AS(dg::DatasetConfig::from_json(j), seg::Error);
  CHECK_THROWS_AS(dg::DatasetConfig::from_json(nlohmann::json::array()), seg::Error);
}

TEST_CASE("zipf masses match the closed form") {
  const auto masses = dg::zipf_masses(4, 1.0);
  CHECK(masses[0] == doctest::Approx(0.48).epsilon(1e-12));
  CHECK(masses[1] == doctest::Approx(0.24).epsilon(1e-12));
  CHECK(masses[2] == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(masses[3] == doctest::Approx(0.12).epsilon(1e-12));

  const auto uniform = dg::zipf_masses(5, 0.0);
  for (double m : uniform) CHECK(m == doctest::Approx(0.2).epsilon(1e-12));

  const auto steep = dg::zipf_masses(20, 2.0);
  CHECK(steep[0] / steep[19] == doctest::Approx(400.0).epsilon(1e-9));
}

TEST_CASE("sites per video follows the area rule with clamping") {
  dg::DatasetConfig cfg = small_config();
  cfg.height = 2;
  cfg.width = 2;
  CHECK(dg::sites_per_video(cfg) == 4);
  cfg.height = 24;
  cfg.width = 24;
  CHECK(dg::sites_per_video(cfg) == 18);
  cfg.height = 100;
  cfg.width = 100;
  CHECK(dg::sites_per_video(cfg) == 64);
}

TEST_CASE("generation is deterministic") {
  const dg::DatasetConfig cfg = small_config();
  const dg::Dataset a = dg::generate(cfg);
  const dg::Dataset b = dg::generate(cfg);
  REQUIRE(a.videos.size() == b.videos.size());
  for (std::size_t v = 0; v < a.videos.size(); ++v) {
    for (std::size_t f = 0; f < a.videos[v].frames.size(); ++f) {
      const dg::Frame& fa = a.videos[v].frames[f];
      const dg::Frame& fb = b.videos[v].frames[f];
      CHECK(fa.labels == fb.labels);
      REQUIRE(fa.features.size() == fb.features.size());
      for (std::size_t i = 0; i < fa.features.size(); ++i) {
        CHECK(fa.features[i] == fb.features[i]);
      }
    }
  }
}

TEST_CASE("frames of one video share labels, videos differ") {
  const dg::Dataset data = dg::generate(small_config());
  std::set<std::vector<std::uint8_t>> label_grids;
  for (const dg::Video& video : data.videos) {
    for (const dg::Frame& frame : video.frames) {
      CHECK(frame.labels == video.frames.front().labels);
      for (std::uint8_t label : frame.labels) CHECK(label < 6);
    }
    label_grids.insert(video.frames.front().labels);
  }
  CHECK(label_grids.size() == data.videos.size());
}

TEST_CASE("features are exactly representable in f32") {
  const dg::Dataset data = dg::generate(small_config());
  for (const dg::Video& video : data.videos) {
    for (const dg::Frame& frame : video.frames) {
      for (std::size_t i = 0; i < frame.features.size(); ++i) {
        const double v = frame.features[i];
        CHECK(static_cast<double>(static_cast<float>(v)) == v);
      }
    }
  }
}

TEST_CASE("zero jitter collapses same-class pixels within a video") {
  dg::DatasetConfig cfg = small_config();
  cfg.frame_jitter = 0.0;
  const dg::Dataset data = dg::generate(cfg);
  const dg::Video& video = data.videos.front();
  const dg::Frame& frame = video.frames.front();
  const std::size_t dim = static_cast<std::size_t>(cfg.feature_dim);
  // find two pixels with the same label
  for (std::size_t p = 1; p < frame.labels.size(); ++p) {
    if (frame.labels[p] != frame.labels[0]) continue;
    for (std::size_t d = 0; d < dim; ++d) {
      CHECK(frame.features[p * dim + d] == frame.features[d]);
    }
    break;
  }
}

TEST_CASE("layout cell classes pass a pooled uniformity chi-square at s=0") {
  dg::DatasetConfig cfg;
  cfg.num_classes = 20;
  cfg.num_videos = 40;
  cfg.height = 24;
  cfg.width = 24;
  cfg.zipf_exponent = 0.0;
  std::vector<std::int64_t> counts(20, 0);
  std::int64_t total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    for (int v = 0; v < cfg.num_videos; ++v) {
      for (int cls : dg::layout_for_video(cfg, v).cell_classes) {
        ++counts[static_cast<std::size_t>(cls)];
        ++total;
      }
    }
  }
  const double expected = static_cast<double>(total) / 20.0;
  double chi_sq = 0.0;
  for (std::int64_t c : counts) {
    const double diff = static_cast<double>(c) - expected;
    chi_sq += diff * diff / expected;
  }
  // chi-square critical value, df = 19, alpha = 0.01
  CHECK(chi_sq < 36.191);
}

TEST_CASE("long-tail pixel counts track the zipf masses") {
  dg::DatasetConfig cfg;
  cfg.num_classes = 20;
  cfg.feature_dim = 4;
  cfg.num_videos = 40;
  cfg.frames_per_video = 1;
  cfg.height = 24;
  cfg.width = 24;
  cfg.zipf_exponent = 1.5;
  std::vector<std::int64_t> pooled(20, 0);
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    cfg.seed = seed;
    const dg::ClassPrior prior = dg::compute_prior(dg::generate(cfg));
    for (std::size_t c = 0; c < 20; ++c) pooled[c] += prior.pixel_counts[c];
  }
  std::int64_t total = 0;
  for (std::int64_t c : pooled) total += c;
  const auto masses = dg::zipf_masses(20, 1.5);
  const double head_share = static_cast<double>(pooled[0]) / static_cast<double>(total);
  CHECK(head_share > 0.6 * masses[0]);
  CHECK(head_share < 1.4 * masses[0]);
  CHECK(pooled[0] > 20 * std::max<std::int64_t>(pooled[19], 1));
}

TEST_CASE("prior smoothing arithmetic") {
  // 30 pixels of class 0, 10 of class 1 -> pi = [31/42, 11/42]
  dg::Dataset data;
  data.config.num_classes = 2;
  data.config.feature_dim = 1;
  data.config.num_videos = 1;
  data.config.frames_per_video = 1;
  data.config.height = 4;
  data.config.width = 10;
  dg::Frame frame;
  frame.features = seg::Tensor({4, 10, 1});
  frame.labels.assign(40, 0);
  for (std::size_t i = 30; i < 40; ++i) frame.labels[i] = 1;
  data.videos.push_back(dg::Video{{frame}});

  const dg::ClassPrior prior = dg::compute_prior(data);
  CHECK(prior.pixel_counts == std::vector<std::int64_t>{30, 10});
  CHECK(prior.pi[0] == doctest::Approx(31.0 / 42.0).epsilon(1e-12));
  CHECK(prior.pi[1] == doctest::Approx(11.0 / 42.0).epsilon(1e-12));
  CHECK(prior.video_counts == std::vector<std::int64_t>{1, 1});
  CHECK(prior.pi[0] + prior.pi[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("absent class keeps a positive smoothed prior") {
  dg::Dataset data;
  data.config.num_classes = 4;
  data.config.feature_dim = 1;
  data.config.num_videos = 1;
  data.config.frames_per_video = 1;
  data.config.height = 10;
  data.config.width = 10;
  dg::Frame frame;
  frame.features = seg::Tensor({10, 10, 1});
  frame.labels.assign(100, 0);
  data.videos.push_back(dg::Video{{frame}});

  const dg::ClassPrior prior = dg::compute_prior(data);
  CHECK(prior.pi[3] == doctest::Approx(1.0 / 104.0).epsilon(1e-12));
  CHECK(prior.pi[3] > 0.0);
}

TEST_CASE("all-ignore dataset cannot produce a prior") {
  dg::Dataset data;
  data.config = small_config();
  data.config.num_videos = 1;
  data.config.frames_per_video = 1;
  dg::Frame frame;
  frame.features = seg::Tensor({10, 12, 4});
  frame.labels.assign(120, dg::kIgnoreLabel);
  data.videos.push_back(dg::Video{{frame}});
  CHECK_THROWS_AS(dg::compute_prior(data), seg::Error);
  try {
    dg::compute_prior(data);
  } catch (const seg::Error& e) {
    CHECK(e.kind() == seg::ErrorKind::EmptyData);
  }
}

TEST_CASE("video-level split keeps order and counts") {
  dg::DatasetConfig cfg = small_config();
  cfg.num_videos = 10;
  const dg::Dataset data = dg::generate(cfg);
  const auto parts = dg::split_dataset(data, 0.6, 0.2);
  CHECK(parts[0].split == "train");
  CHECK(parts[1].split == "val");
  CHECK(parts[2].split == "test");
  CHECK(parts[0].videos.size() == 6);
  CHECK(parts[1].videos.size() == 2);
  CHECK(parts[2].videos.size() == 2);
  CHECK(parts[0].config.num_videos == 6);
  // contiguous blocks in original order
  CHECK(parts[0].videos[0].frames[0].labels == data.videos[0].frames[0].labels);
  CHECK(parts[1].videos[0].frames[0].labels == data.videos[6].frames[0].labels);
  CHECK(parts[2].videos[1].frames[0].labels == data.videos[9].frames[0].labels);

  dg::Dataset tiny = data;
  tiny.videos.resize(2);
  CHECK_THROWS_AS(dg::split_dataset(tiny, 0.6, 0.2), seg::Error);
  CHECK_THROWS_AS(dg::split_dataset(data, 0.0, 0.2), seg::Error);
  CHECK_THROWS_AS(dg::split_dataset(data, 0.9, 0.2), seg::Error);

  // extreme but legal fractions still leave one video per split
  const auto skewed = dg::split_dataset(data, 0.98, 0.01);
  CHECK(skewed[0].videos.size() == 8);
  CHECK(skewed[1].videos.size() == 1);
  CHECK(skewed[2].videos.size() == 1);
}

TEST_CASE("sseg files round trip byte for byte") {
  const dg::DatasetConfig cfg = small_config();
  const dg::Dataset data = dg::generate(cfg);
  const fs::path first = temp_path("seg_test_a.sseg");
  const fs::path second = temp_path("seg_test_b.sseg");
  dg::save_sseg(data, first);
  const dg::Dataset loaded = dg::load_sseg(first);
  dg::save_sseg(loaded, second);
  CHECK(read_file(first) == read_file(second));

  CHECK(loaded.split == data.split);
  CHECK(loaded.config.to_json() == data.config.to_json());
  for (std::size_t v = 0; v < data.videos.size(); ++v) {
    for (std::size_t f = 0; f < data.videos[v].frames.size(); ++f) {
      const dg::Frame& fa = data.videos[v].frames[f];
      const dg::Frame& fb = loaded.videos[v].frames[f];
      CHECK(fa.labels == fb.labels);
      for (std::size_t i = 0; i < fa.features.size(); ++i) {
        CHECK(fa.features[i] == fb.features[i]);
      }
    }
  }
  std::remove(first.string().c_str());
  std::remove(second.string().c_str());
}

TEST_CASE("sseg rejects a corrupted magic") {
  const fs::path path = temp_path("seg_test_corrupt.sseg");
  const dg::Dataset data = dg::generate(small_config());
  dg::save_sseg(data, path);
  std::string bytes = read_file(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary).write(bytes.data(),
                                              static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(dg::load_sseg(path), seg::Error);
  std::remove(path.string().c_str());
}
