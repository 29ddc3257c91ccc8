#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "seg/ensemble.hpp"
#include "seg/error.hpp"
#include "seg/metrics.hpp"
#include "seg/model.hpp"
#include "seg/rng.hpp"

namespace en = seg::ensemble;
namespace md = seg::model;
namespace fs = std::filesystem;
using seg::Tensor;

namespace {

en::PredictionMap make_map(std::vector<std::size_t> shape, std::vector<double> data,
                           std::string frame_id, std::string model_id) {
  en::PredictionMap map;
  map.probs = Tensor(std::move(shape), std::move(data));
  map.frame_id = std::move(frame_id);
  map.model_id = std::move(model_id);
  return map;
}

en::PredictionMap random_prob_map(std::size_t h, std::size_t w, std::size_t l,
                                  seg::Rng& rng, std::string frame_id,
                                  std::string model_id) {
  Tensor probs({h, w, l});
  for (std::size_t pix = 0; pix < h * w; ++pix) {
    double sum = 0.0;
    for (std::size_t y = 0; y < l; ++y) {
      const double v = rng.next_double() + 0.05;
      probs[pix * l + y] = v;
      sum += v;
    }
    for (std::size_t y = 0; y < l; ++y) probs[pix * l + y] /= sum;
  }
  en::PredictionMap map;
  map.probs = std::move(probs);
  map.frame_id = std::move(frame_id);
  map.model_id = std::move(model_id);
  return map;
}

md::ModelParams small_model(seg::Rng& rng) {
  return md::init_params(3, 6, 4, md::HeadKind::Standard, 0.0, rng);
}

Tensor random_features(std::size_t h, std::size_t w, std::size_t d, seg::Rng& rng) {
  Tensor t({h, w, d});
  for (double& v : t.values()) v = rng.next_gaussian();
  return t;
}

}  // namespace

TEST_CASE("fusion worked example") {
  // strong [0.6, 0.4], weak [0.5, 0.5], aux [0.2, 0.8], alpha 1.4, beta 1.0
  // -> [0.6 + 0.7 + 0.2, 0.4 + 0.7 + 0.8] = [1.5, 1.9]
  const auto strong = make_map({1, 1, 2}, {0.6, 0.4}, "f0", "s");
  const auto weak = make_map({1, 1, 2}, {0.5, 0.5}, "f0", "w");
  const auto aux = make_map({1, 1, 2}, {0.2, 0.8}, "f0", "a");
  const en::PredictionMap fused = en::fuse(strong, weak, aux, en::FusionWeights{1.4, 1.0});
  CHECK(fused.probs[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(fused.probs[1] == doctest::Approx(1.9).epsilon(1e-12));
  CHECK(fused.fused);
  CHECK(fused.model_id == "fused");
  CHECK(en::argmax_labels(fused.probs) == std::vector<std::uint8_t>{1});
}

TEST_CASE("fusion validates shapes, frames and weights") {
  const auto strong = make_map({1, 1, 2}, {0.6, 0.4}, "f0", "s");
  const auto weak = make_map({1, 1, 2}, {0.5, 0.5}, "f1", "w");
  const auto aux = make_map({1, 1, 2}, {0.2, 0.8}, "f0", "a");
  CHECK_THROWS_AS(en::fuse(strong, weak, aux, en::FusionWeights{}), seg::Error);

  const auto weak_ok = make_map({1, 1, 2}, {0.5, 0.5}, "f0", "w");
  en::FusionWeights bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(en::fuse(strong, weak_ok, aux, bad), seg::Error);
  bad.alpha = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(en::fuse(strong, weak_ok, aux, bad), seg::Error);
  CHECK_THROWS_AS(en::fuse(strong, make_map({1, 2, 1}, {0.5, 0.5}, "f0", "w"), aux,
                           en::FusionWeights{}),
                  seg::Error);
}

TEST_CASE("argmax breaks ties toward the lower class") {
  const Tensor probs({1, 2, 3}, {0.2, 0.5, 0.3, 0.4, 0.4, 0.2});
  CHECK(en::argmax_labels(probs) == std::vector<std::uint8_t>{1, 0});
  CHECK_THROWS_AS(en::argmax_labels(Tensor({1, 1, 256})), seg::Error);
}

TEST_CASE("group spec validation") {
  en::GroupSpec spec;
  spec.strong = {"a"};
  spec.weak = {"b", "c"};
  spec.aux = {"d"};
  spec.validate();

  spec.weak.push_back("a");
  CHECK_THROWS_AS(spec.validate(), seg::Error);

  en::GroupSpec empty;
  CHECK_THROWS_AS(empty.validate(), seg::Error);
}

TEST_CASE("predict_frame emits per-pixel probability vectors") {
  seg::Rng rng(3);
  const md::ModelParams params = small_model(rng);
  const Tensor x = random_features(4, 5, 3, rng);
  const en::PredictionMap map = en::predict_frame(params, x, "v0_f0", "m0");
  CHECK(map.frame_id == "v0_f0");
  CHECK(map.model_id == "m0");
  CHECK(!map.fused);
  REQUIRE(map.probs.shape() == std::vector<std::size_t>{4, 5, 4});
  for (std::size_t pix = 0; pix < 20; ++pix) {
    double sum = 0.0;
    for (std::size_t y = 0; y < 4; ++y) {
      const double p = map.probs[pix * 4 + y];
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(en::predict_frame(params, Tensor({4, 3}), "f", "m"), seg::Error);
}

TEST_CASE("bilinear resize interpolates and respects corners") {
  // identity is a bitwise copy
  seg::Rng rng(5);
  const Tensor src = random_features(3, 4, 2, rng);
  const Tensor same = en::resize_bilinear(src, 3, 4);
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(same[i] == src[i]);

  // single row upsampling: [0, 1, 2] -> [0, 0.5, 1, 1.5, 2]
  const Tensor row({1, 3, 1}, {0.0, 1.0, 2.0});
  const Tensor up = en::resize_bilinear(row, 1, 5);
  CHECK(up[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(up[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(up[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(up[3] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(up[4] == doctest::Approx(2.0).epsilon(1e-12));

  // corners of an arbitrary resize match the source corners
  const Tensor big = en::resize_bilinear(src, 7, 9);
  const std::size_t c = 2;
  CHECK(big[0] == src[0]);
  CHECK(big[(9 - 1) * c] == src[(4 - 1) * c]);
  CHECK(big[(6 * 9) * c] == src[(2 * 4) * c]);
  CHECK(big[(6 * 9 + 8) * c + 1] == src[(2 * 4 + 3) * c + 1]);

  // constant fields stay constant under any resize
  const Tensor flat = Tensor::full({3, 3, 1}, 0.25);
  const Tensor resized = en::resize_bilinear(flat, 5, 2);
  for (double v : resized.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  // collapsing to 1x1 picks the top-left corner
  const Tensor tiny = en::resize_bilinear(src, 1, 1);
  CHECK(tiny[0] == src[0]);
  CHECK(tiny[1] == src[1]);

  CHECK_THROWS_AS(en::resize_bilinear(src, 0, 4), seg::Error);
  CHECK_THROWS_AS(en::resize_bilinear(Tensor({3, 4}), 2, 2), seg::Error);
}

TEST_CASE("horizontal flip mirrors and involutes") {
  const Tensor src({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor flipped = en::flip_horizontal(src);
  CHECK(flipped[0] == 5);
  CHECK(flipped[1] == 6);
  CHECK(flipped[2] == 3);
  CHECK(flipped[3] == 4);
  CHECK(flipped[4] == 1);
  CHECK(flipped[5] == 2);
  const Tensor back = en::flip_horizontal(flipped);
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(back[i] == src[i]);
}

TEST_CASE("tta with scale 1 and no flip is bit-identical to plain prediction") {
  seg::Rng rng(7);
  const md::ModelParams params = small_model(rng);
  const Tensor x = random_features(5, 6, 3, rng);
  const en::PredictionMap plain = en::predict_frame(params, x, "f", "m");
  const std::vector<double> scales = {1.0};
  const en::PredictionMap tta = en::tta_predict(params, x, "f", "m", scales, false);
  REQUIRE(tta.probs.size() == plain.probs.size());
  for (std::size_t i = 0; i < plain.probs.size(); ++i) {
    CHECK(tta.probs[i] == plain.probs[i]);
  }
}

TEST_CASE("flip tta commutes with mirrored inputs") {
  seg::Rng rng(11);
  const md::ModelParams params = small_model(rng);
  const Tensor x = random_features(6, 8, 3, rng);
  const std::vector<double> scales = {0.75, 1.0, 1.25};
  const en::PredictionMap direct = en::tta_predict(params, x, "f", "m", scales, true);
  const en::PredictionMap mirrored =
      en::tta_predict(params, en::flip_horizontal(x), "f", "m", scales, true);
  const Tensor restored = en::flip_horizontal(mirrored.probs);
  REQUIRE(restored.size() == direct.probs.size());
  for (std::size_t i = 0; i < direct.probs.size(); ++i) {
    CHECK(std::abs(direct.probs[i] - restored[i]) <= 1e-9);
  }
}

TEST_CASE("tta validates its scales") {
  seg::Rng rng(13);
  const md::ModelParams params = small_model(rng);
  const Tensor x = random_features(3, 3, 3, rng);
  const std::vector<double> none = {};
  CHECK_THROWS_AS(en::tta_predict(params, x, "f", "m", none, false), seg::Error);
  const std::vector<double> bad = {1.0, -0.5};
  CHECK_THROWS_AS(en::tta_predict(params, x, "f", "m", bad, false), seg::Error);
}

TEST_CASE("group average is an order-independent mean") {
  seg::Rng rng(17);
  std::vector<en::PredictionMap> maps;
  for (int m = 0; m < 5; ++m) {
    maps.push_back(random_prob_map(3, 4, 4, rng, "f0", "model" + std::to_string(m)));
  }
  const en::PredictionMap avg = en::group_average(maps);
  CHECK(avg.frame_id == "f0");
  CHECK(avg.model_id == "model0+model1+model2+model3+model4");
  for (std::size_t i = 0; i < avg.probs.size(); ++i) {
    long double acc = 0.0L;
    for (const auto& m : maps) acc += m.probs[i];
    CHECK(std::abs(avg.probs[i] - static_cast<double>(acc / 5.0L)) <= 1e-12);
  }

  seg::Rng shuffler(23);
  std::vector<std::size_t> order = {0, 1, 2, 3, 4};
  for (int round = 0; round < 10; ++round) {
    shuffler.shuffle(order);
    std::vector<en::PredictionMap> permuted;
    for (std::size_t i : order) permuted.push_back(maps[i]);
    const en::PredictionMap again = en::group_average(permuted);
    CHECK(again.model_id == avg.model_id);
    for (std::size_t i = 0; i < avg.probs.size(); ++i) {
      CHECK(again.probs[i] == avg.probs[i]);
    }
  }
}

TEST_CASE("group average of one map is the map itself") {
  seg::Rng rng(29);
  const auto map = random_prob_map(2, 2, 3, rng, "f0", "solo");
  const en::PredictionMap avg = en::group_average({map});
  CHECK(avg.model_id == "solo");
  for (std::size_t i = 0; i < map.probs.size(); ++i) CHECK(avg.probs[i] == map.probs[i]);
}

TEST_CASE("group average rejects fused or mismatched maps") {
  seg::Rng rng(31);
  auto a = random_prob_map(2, 2, 3, rng, "f0", "a");
  auto b = random_prob_map(2, 2, 3, rng, "f0", "b");
  b.fused = true;
  CHECK_THROWS_AS(en::group_average({a, b}), seg::Error);
  b.fused = false;
  b.frame_id = "f1";
  CHECK_THROWS_AS(en::group_average({a, b}), seg::Error);
  CHECK_THROWS_AS(en::group_average({}), seg::Error);
}

TEST_CASE("grid search matches a serial brute force") {
  seg::Rng rng(37);
  const std::size_t h = 3, w = 4, l = 4;
  std::vector<en::FrameEnsemble> frames;
  for (int f = 0; f < 4; ++f) {
    en::FrameEnsemble fe;
    const std::string id = "f" + std::to_string(f);
    fe.strong = random_prob_map(h, w, l, rng, id, "s");
    fe.weak = random_prob_map(h, w, l, rng, id, "w");
    fe.aux = random_prob_map(h, w, l, rng, id, "a");
    fe.labels.resize(h * w);
    for (auto& lab : fe.labels) {
      lab = rng.next_double() < 0.1 ? std::uint8_t{255}
                                    : static_cast<std::uint8_t>(rng.next_below(l));
    }
    frames.push_back(std::move(fe));
  }

  const std::vector<double> alphas = {0.0, 0.7, 1.4, 2.0};
  const std::vector<double> betas = {0.0, 0.5, 1.0};
  const en::GridSearchResult result = en::grid_search(frames, alphas, betas);

  double best = -1.0;
  en::FusionWeights best_w{alphas[0], betas[0]};
  for (std::size_t ia = 0; ia < alphas.size(); ++ia) {
    for (std::size_t ib = 0; ib < betas.size(); ++ib) {
      const en::FusionWeights weights{alphas[ia], betas[ib]};
      seg::metrics::Confusion confusion(static_cast<int>(l));
      for (const auto& fe : frames) {
        const auto fused = en::fuse(fe.strong, fe.weak, fe.aux, weights);
        confusion.accumulate(en::argmax_labels(fused.probs), fe.labels);
      }
      const double cell = seg::metrics::miou(confusion).miou;
      CHECK(result.miou_table[ia][ib] == cell);
      if (cell > best) {
        best = cell;
        best_w = weights;
      }
    }
  }
  CHECK(result.best_miou == best);
  CHECK(result.best.alpha == best_w.alpha);
  CHECK(result.best.beta == best_w.beta);

  const auto j = result.to_json();
  CHECK(j["best"]["miou"].get<double>() == best);
  CHECK(j["miou_table"].size() == alphas.size());
}

TEST_CASE("grid search canonicalizes grids and breaks ties low") {
  seg::Rng rng(41);
  const std::size_t h = 2, w = 3, l = 3;
  en::FrameEnsemble fe;
  fe.strong = random_prob_map(h, w, l, rng, "f0", "s");
  // uniform weak and aux maps never change the argmax, so every cell ties
  fe.weak = make_map({h, w, l}, std::vector<double>(h * w * l, 1.0 / l), "f0", "w");
  fe.aux = make_map({h, w, l}, std::vector<double>(h * w * l, 1.0 / l), "f0", "a");
  fe.labels.assign(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    fe.labels[i] = static_cast<std::uint8_t>(i % l);
  }

  const std::vector<double> alphas = {1.4, 0.2, 1.4, 0.8};
  const std::vector<double> betas = {1.0, 0.4};
  const en::GridSearchResult result = en::grid_search({fe}, alphas, betas);
  CHECK(result.alpha_grid == std::vector<double>{0.2, 0.8, 1.4});
  CHECK(result.beta_grid == std::vector<double>{0.4, 1.0});
  CHECK(result.best.alpha == 0.2);
  CHECK(result.best.beta == 0.4);
  for (const auto& row : result.miou_table) {
    for (double cell : row) CHECK(cell == result.best_miou);
  }
}

TEST_CASE("grid search validates its inputs") {
  CHECK_THROWS_AS(en::grid_search({}, {1.0}, {1.0}), seg::Error);

  seg::Rng rng(43);
  en::FrameEnsemble fe;
  fe.strong = random_prob_map(2, 2, 3, rng, "f0", "s");
  fe.weak = random_prob_map(2, 2, 3, rng, "f0", "w");
  fe.aux = random_prob_map(2, 2, 3, rng, "f0", "a");
  fe.labels.assign(3, 0);  // wrong size
  CHECK_THROWS_AS(en::grid_search({fe}, {1.0}, {1.0}), seg::Error);
  fe.labels.assign(4, 0);
  CHECK_THROWS_AS(en::grid_search({fe}, {}, {1.0}), seg::Error);
  CHECK_THROWS_AS(en::grid_search({fe}, {-1.0}, {1.0}), seg::Error);
}

TEST_CASE("pmap files round trip") {
  seg::Rng rng(47);
  en::PredictionMap map = random_prob_map(3, 2, 4, rng, "v001_f02", "strong0");
  map.fused = false;
  const fs::path first = fs::temp_directory_path() / "seg_test_a.pmap";
  const fs::path second = fs::temp_directory_path() / "seg_test_b.pmap";
  en::save_pmap(map, first);
  const en::PredictionMap loaded = en::load_pmap(first);
  CHECK(loaded.frame_id == "v001_f02");
  CHECK(loaded.model_id == "strong0");
  CHECK(!loaded.fused);
  REQUIRE(loaded.probs.shape() == map.probs.shape());
  for (std::size_t i = 0; i < map.probs.size(); ++i) {
    CHECK(loaded.probs[i] == static_cast<double>(static_cast<float>(map.probs[i])));
  }
  en::save_pmap(loaded, second);
  std::ifstream in_a(first, std::ios::binary);
  std::ifstream in_b(second, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(in_a)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(in_b)),
                            std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);

  std::string corrupted = bytes_a;
  corrupted[2] = 'X';
  std::ofstream(first, std::ios::binary)
      .write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
  CHECK_THROWS_AS(en::load_pmap(first), seg::Error);
  std::remove(first.string().c_str());
  std::remove(second.string().c_str());
}
