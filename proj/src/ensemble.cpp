#include "seg/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "seg/binio.hpp"
#include "seg/error.hpp"
#include "seg/metrics.hpp"
#include "seg/parallel.hpp"
#include "seg/swa.hpp"

namespace seg::ensemble {

namespace {

void require_map_shape(const Tensor& probs) {
  require(probs.rank() == 3, ErrorKind::InvalidShape,
          "prediction maps must be [H, W, L]");
}

void renormalize(Tensor& probs) {
  const std::size_t classes = probs.last_extent();
  const std::size_t pixels = probs.slice_count();
  double* p = probs.data();
  for (std::size_t i = 0; i < pixels; ++i, p += classes) {
    double sum = 0.0;
    for (std::size_t y = 0; y < classes; ++y) sum += p[y];
    require(sum > 0.0 && std::isfinite(sum), ErrorKind::Numeric,
            "probability mass vanished during renormalization");
    for (std::size_t y = 0; y < classes; ++y) p[y] /= sum;
  }
}

Tensor raw_probs(const model::ModelParams& params, const Tensor& features) {
  const Tensor logits =
      model::forward_logits(params, features, nullptr, model::HeadMode::Infer);
  return softmax(logits);
}

void require_same_frame(const PredictionMap& a, const PredictionMap& b,
                        const char* what) {
  require(a.frame_id == b.frame_id, ErrorKind::InvalidInput,
          std::string(what) + ": frame ids differ");
  require(a.probs.same_shape(b.probs), ErrorKind::InvalidInput,
          std::string(what) + ": map shapes differ");
}

}  // namespace

void GroupSpec::validate() const {
  require(!strong.empty(), ErrorKind::Config, "strong group must be nonempty");
  std::set<std::string> seen;
  for (const auto* group : {&strong, &weak, &aux}) {
    for (const std::string& id : *group) {
      require(seen.insert(id).second, ErrorKind::Config,
              "model id appears in more than one group: " + id);
    }
  }
}

void FusionWeights::validate() const {
  require(std::isfinite(alpha) && alpha >= 0.0, ErrorKind::Config,
          "alpha must be finite and >= 0");
  require(std::isfinite(beta) && beta >= 0.0, ErrorKind::Config,
          "beta must be finite and >= 0");
}

PredictionMap predict_frame(const model::ModelParams& params, const Tensor& features,
                            std::string frame_id, std::string model_id) {
  require(features.rank() == 3, ErrorKind::InvalidShape,
          "frame features must be [H, W, D]");
  PredictionMap map;
  map.probs = raw_probs(params, features);
  renormalize(map.probs);
  map.frame_id = std::move(frame_id);
  map.model_id = std::move(model_id);
  return map;
}

Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  require(src.rank() == 3, ErrorKind::InvalidShape, "resize expects [H, W, C]");
  const std::size_t in_h = src.extent(0);
  const std::size_t in_w = src.extent(1);
  const std::size_t channels = src.extent(2);
  require(out_h >= 1 && out_w >= 1, ErrorKind::InvalidInput,
          "resize target must be at least 1x1");
  if (out_h == in_h && out_w == in_w) return src;

  // Corner-aligned sampling: output corner pixels hit input corner pixels.
  const auto src_coord = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) /
           static_cast<double>(out_n - 1);
  };

  Tensor out({out_h, out_w, channels});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = src_coord(oy, out_h, in_h);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = src_coord(ox, out_w, in_w);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double* v00 = src.data() + (y0 * in_w + x0) * channels;
      const double* v01 = src.data() + (y0 * in_w + x1) * channels;
      const double* v10 = src.data() + (y1 * in_w + x0) * channels;
      const double* v11 = src.data() + (y1 * in_w + x1) * channels;
      double* dst = out.data() + (oy * out_w + ox) * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        dst[c] = (1.0 - wy) * ((1.0 - wx) * v00[c] + wx * v01[c]) +
                 wy * ((1.0 - wx) * v10[c] + wx * v11[c]);
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& src) {
  require(src.rank() == 3, ErrorKind::InvalidShape, "flip expects [H, W, C]");
  const std::size_t h = src.extent(0);
  const std::size_t w = src.extent(1);
  const std::size_t channels = src.extent(2);
  Tensor out(src.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* from = src.data() + (y * w + x) * channels;
      double* to = out.data() + (y * w + (w - 1 - x)) * channels;
      std::copy(from, from + channels, to);
    }
  }
  return out;
}

PredictionMap tta_predict(const model::ModelParams& params, const Tensor& features,
                          std::string frame_id, std::string model_id,
                          std::span<const double> scales, bool flip) {
  require(features.rank() == 3, ErrorKind::InvalidShape,
          "frame features must be [H, W, D]");
  require(!scales.empty(), ErrorKind::InvalidInput, "scales must be nonempty");
  const std::size_t h = features.extent(0);
  const std::size_t w = features.extent(1);

  Tensor sum({h, w, params.num_classes()});
  std::size_t variants = 0;
  for (double scale : scales) {
    require(std::isfinite(scale) && scale > 0.0, ErrorKind::InvalidInput,
            "scales must be finite and > 0");
    const auto scaled_h = static_cast<std::size_t>(
        std::ceil(scale * static_cast<double>(h)));
    const auto scaled_w = static_cast<std::size_t>(
        std::ceil(scale * static_cast<double>(w)));
    require(scaled_h >= 1 && scaled_w >= 1, ErrorKind::InvalidInput,
            "scale produces an empty image");

    const Tensor scaled = resize_bilinear(features, scaled_h, scaled_w);
    const Tensor back = resize_bilinear(raw_probs(params, scaled), h, w);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += back[i];
    ++variants;

    if (flip) {
      const Tensor mirrored = flip_horizontal(scaled);
      const Tensor restored =
          flip_horizontal(resize_bilinear(raw_probs(params, mirrored), h, w));
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += restored[i];
      ++variants;
    }
  }

  PredictionMap map;
  map.probs = std::move(sum);
  const auto divisor = static_cast<double>(variants);
  for (std::size_t i = 0; i < map.probs.size(); ++i) map.probs[i] /= divisor;
  renormalize(map.probs);
  map.frame_id = std::move(frame_id);
  map.model_id = std::move(model_id);
  return map;
}

PredictionMap group_average(const std::vector<PredictionMap>& maps) {
  require(!maps.empty(), ErrorKind::InvalidInput, "no maps to average");
  require_map_shape(maps.front().probs);
  if (maps.size() == 1) return maps.front();

  for (std::size_t i = 1; i < maps.size(); ++i) {
    require_same_frame(maps.front(), maps[i], "group_average");
    require(!maps[i].fused, ErrorKind::InvalidInput,
            "group_average expects unfused probability maps");
  }

  PredictionMap out;
  out.frame_id = maps.front().frame_id;
  out.probs = Tensor(maps.front().probs.shape());
  std::vector<double> column(maps.size());
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    for (std::size_t s = 0; s < maps.size(); ++s) column[s] = maps[s].probs[i];
    std::sort(column.begin(), column.end());
    out.probs[i] = swa::pairwise_sum(column) / static_cast<double>(maps.size());
  }

  std::vector<std::string> ids;
  for (const PredictionMap& m : maps) ids.push_back(m.model_id);
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const std::string& id : ids) {
    if (!joined.empty()) joined += '+';
    joined += id;
  }
  out.model_id = joined;
  return out;
}

PredictionMap fuse(const PredictionMap& strong, const PredictionMap& weak,
                   const PredictionMap& aux, const FusionWeights& weights) {
  weights.validate();
  require_map_shape(strong.probs);
  require_same_frame(strong, weak, "fuse");
  require_same_frame(strong, aux, "fuse");

  PredictionMap out;
  out.frame_id = strong.frame_id;
  out.model_id = "fused";
  out.fused = true;
  out.probs = Tensor(strong.probs.shape());
  const double* ps = strong.probs.data();
  const double* pw = weak.probs.data();
  const double* pa = aux.probs.data();
  double* pf = out.probs.data();
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    pf[i] = ps[i] + weights.alpha * pw[i] + weights.beta * pa[i];
  }
  return out;
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probs) {
  const std::size_t classes = probs.last_extent();
  const std::size_t pixels = probs.slice_count();
  require(classes <= 255, ErrorKind::InvalidShape,
          "more classes than the label type can hold");
  std::vector<std::uint8_t> labels(pixels);
  const double* p = probs.data();
  for (std::size_t i = 0; i < pixels; ++i, p += classes) {
    std::size_t best = 0;
    for (std::size_t y = 1; y < classes; ++y) {
      if (p[y] > p[best]) best = y;  // strict: ties keep the lower index
    }
    labels[i] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

nlohmann::json GridSearchResult::to_json() const {
  return {
      {"alpha_grid", alpha_grid},
      {"beta_grid", beta_grid},
      {"miou_table", miou_table},
      {"best", {{"alpha", best.alpha}, {"beta", best.beta}, {"miou", best_miou}}},
  };
}

GridSearchResult grid_search(const std::vector<FrameEnsemble>& frames,
                             std::vector<double> alpha_grid,
                             std::vector<double> beta_grid) {
  require(!frames.empty(), ErrorKind::InvalidInput, "no frames to search over");
  require(!alpha_grid.empty() && !beta_grid.empty(), ErrorKind::InvalidInput,
          "alpha and beta grids must be nonempty");
  for (const FrameEnsemble& frame : frames) {
    require_map_shape(frame.strong.probs);
    require_same_frame(frame.strong, frame.weak, "grid_search");
    require_same_frame(frame.strong, frame.aux, "grid_search");
    require(frame.labels.size() == frame.strong.probs.slice_count(),
            ErrorKind::InvalidInput, "label grid does not match map shape");
  }

  auto canonicalize = [](std::vector<double>& grid) {
    for (double v : grid) {
      require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidInput,
              "grid values must be finite and >= 0");
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  };
  canonicalize(alpha_grid);
  canonicalize(beta_grid);

  const std::size_t num_classes = frames.front().strong.probs.last_extent();
  const std::size_t na = alpha_grid.size();
  const std::size_t nb = beta_grid.size();

  GridSearchResult result;
  result.alpha_grid = alpha_grid;
  result.beta_grid = beta_grid;
  result.miou_table.assign(na, std::vector<double>(nb, 0.0));

  parallel_for(na * nb, [&](std::size_t point) {
    const std::size_t ia = point / nb;
    const std::size_t ib = point % nb;
    const FusionWeights weights{alpha_grid[ia], beta_grid[ib]};
    metrics::Confusion confusion(static_cast<int>(num_classes));
    for (const FrameEnsemble& frame : frames) {
      const PredictionMap fused = fuse(frame.strong, frame.weak, frame.aux, weights);
      const std::vector<std::uint8_t> pred = argmax_labels(fused.probs);
      confusion.accumulate(pred, frame.labels);
    }
    result.miou_table[ia][ib] = metrics::miou(confusion).miou;
  });

  // ascending scan with strict improvement keeps the smallest (alpha, beta)
  result.best = FusionWeights{alpha_grid[0], beta_grid[0]};
  result.best_miou = result.miou_table[0][0];
  for (std::size_t ia = 0; ia < na; ++ia) {
    for (std::size_t ib = 0; ib < nb; ++ib) {
      if (result.miou_table[ia][ib] > result.best_miou) {
        result.best_miou = result.miou_table[ia][ib];
        result.best = FusionWeights{alpha_grid[ia], beta_grid[ib]};
      }
    }
  }
  return result;
}

void save_pmap(const PredictionMap& map, const std::filesystem::path& path) {
  require_map_shape(map.probs);
  const nlohmann::json header = {
      {"frame_id", map.frame_id},
      {"H", map.probs.extent(0)},
      {"W", map.probs.extent(1)},
      {"L", map.probs.extent(2)},
      {"model_id", map.model_id},
      {"fused", map.fused},
  };
  std::ofstream out = binio::open_output(path);
  binio::write_header(out, "PMAP", 1, header);
  binio::write_f32_block(out, map.probs.values());
}

PredictionMap load_pmap(const std::filesystem::path& path) {
  std::ifstream in = binio::open_input(path);
  const nlohmann::json header = binio::read_header(in, "PMAP", 1, "PMAP");
  PredictionMap map;
  try {
    const auto h = header.at("H").get<std::size_t>();
    const auto w = header.at("W").get<std::size_t>();
    const auto l = header.at("L").get<std::size_t>();
    map.frame_id = header.at("frame_id").get<std::string>();
    map.model_id = header.at("model_id").get<std::string>();
    map.fused = header.at("fused").get<bool>();
    map.probs = Tensor({h, w, l});
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Io, std::string("bad PMAP header: ") + e.what());
  }
  binio::read_f32_block(in, map.probs.values(), "PMAP probabilities");
  return map;
}

}  // namespace seg::ensemble
