#include "seg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "seg/digest.hpp"
#include "seg/ensemble.hpp"
#include "seg/error.hpp"
#include "seg/losses.hpp"
#include "seg/parallel.hpp"
#include "seg/rng.hpp"

namespace seg::trainer {

namespace {

// Independent RNG streams derived from the config seed.
constexpr std::uint64_t kInitStream = 100;
constexpr std::uint64_t kShuffleStream = 101;

struct FrameGrad {
  Tensor dw1, db1, dw2, db2;
  double loss = 0.0;
  std::size_t selected = 0;
};

std::size_t valid_pixel_count(const datagen::Frame& frame) {
  std::size_t count = 0;
  for (std::uint8_t label : frame.labels) {
    if (label != datagen::kIgnoreLabel) ++count;
  }
  return count;
}

losses::OhemConfig resolve_ohem(const TrainConfig& cfg, const datagen::Frame& frame) {
  losses::OhemConfig ohem;
  ohem.conf_threshold = cfg.ohem_conf_threshold;
  if (cfg.ohem_min_keep.has_value()) {
    ohem.min_keep = static_cast<std::size_t>(*cfg.ohem_min_keep);
  } else {
    ohem.min_keep = valid_pixel_count(frame) / 20;  // 5% floor
  }
  return ohem;
}

Tensor train_logits(const model::ModelParams& params, const Tensor& feats,
                    const datagen::ClassPrior& prior) {
  if (params.head_kind == model::HeadKind::Standard) {
    return model::head_standard(params, feats);
  }
  return model::head_cosine_la(params, feats, &prior, model::HeadMode::Train);
}

FrameGrad frame_gradient(const model::ModelParams& params,
                         const datagen::Frame& frame,
                         const datagen::ClassPrior& prior, const TrainConfig& cfg,
                         const model::ModelParams* teacher) {
  const Tensor feats = model::extract_features(params, frame.features);
  const Tensor logits = train_logits(params, feats, prior);

  losses::LossOutput base;
  switch (cfg.loss_kind) {
    case LossKind::Ce:
    case LossKind::LaCe:
      base = losses::ce_loss(logits, frame.labels);
      break;
    case LossKind::CeOhem:
      base = losses::ohem_ce_loss(logits, frame.labels, resolve_ohem(cfg, frame));
      break;
  }

  Tensor dlogits = std::move(base.grad_logits);
  double loss = base.value;
  if (teacher != nullptr && cfg.distill->lambda != 0.0) {
    const Tensor teacher_feats = model::extract_features(*teacher, frame.features);
    const Tensor teacher_logits = train_logits(*teacher, teacher_feats, prior);
    const losses::LossOutput kl =
        losses::distill_kl(logits, teacher_logits, cfg.distill->temperature);
    loss += cfg.distill->lambda * kl.value;
    for (std::size_t i = 0; i < dlogits.size(); ++i) {
      dlogits[i] += cfg.distill->lambda * kl.grad_logits[i];
    }
  }

  const model::HeadGrads head =
      params.head_kind == model::HeadKind::Standard
          ? model::head_standard_vjp(params, feats, dlogits)
          : model::head_cosine_vjp(params, feats, dlogits);
  const model::FeatureGrads feature =
      model::extract_features_vjp(params, frame.features, head.dfeats);

  FrameGrad grad;
  grad.dw1 = feature.dw1;
  grad.db1 = feature.db1;
  grad.dw2 = head.dw2;
  grad.db2 = head.db2;
  grad.loss = loss;
  grad.selected = base.selected_count;
  return grad;
}

void axpy(Tensor& dst, const Tensor& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Ce: return "ce";
    case LossKind::CeOhem: return "ce_ohem";
    case LossKind::LaCe: return "la_ce";
  }
  return "unknown";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "ce") return LossKind::Ce;
  if (name == "ce_ohem") return LossKind::CeOhem;
  if (name == "la_ce") return LossKind::LaCe;
  raise(ErrorKind::Config, "unknown loss kind: " + name);
}

void TrainConfig::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(finite_nonneg(base_lr) && finite_nonneg(lr_min) && finite_nonneg(lr_max),
          ErrorKind::Config, "learning rates must be finite and >= 0");
  require(lr_min <= lr_max, ErrorKind::Config, "lr_min must not exceed lr_max");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config,
          "momentum must lie in [0, 1)");
  require(total_iters >= 0 && swa_extra_iters >= 0, ErrorKind::Config,
          "iteration counts must be >= 0");
  require(batch_frames >= 1, ErrorKind::Config, "batch_frames must be >= 1");
  require(hidden_dim >= 1, ErrorKind::Config, "hidden_dim must be >= 1");
  require(ohem_conf_threshold > 0.0 && ohem_conf_threshold <= 1.0,
          ErrorKind::Config, "ohem_conf_threshold must lie in (0, 1]");
  require(!ohem_min_keep.has_value() || *ohem_min_keep >= 0, ErrorKind::Config,
          "ohem_min_keep must be >= 0");
  require(tau >= 0.0, ErrorKind::Config, "tau must be >= 0");
  require(cosine_scale > 0.0, ErrorKind::Config, "cosine_scale must be > 0");
  require(cycle_length == snapshot_interval, ErrorKind::Config,
          "cycle_length must equal snapshot_interval");
  if (swa_extra_iters > 0) {
    require(snapshot_interval >= 1, ErrorKind::Config,
            "snapshot_interval must be >= 1 when SWA iterations are requested");
    require(swa_extra_iters % snapshot_interval == 0, ErrorKind::Config,
            "snapshot_interval must divide swa_extra_iters");
  } else {
    require(snapshot_interval >= 0, ErrorKind::Config,
            "snapshot_interval must be >= 0");
  }
  if (distill.has_value()) {
    require(!distill->teacher_checkpoint.empty(), ErrorKind::Config,
            "distill.teacher_checkpoint must be set");
    require(std::isfinite(distill->lambda) && distill->lambda >= 0.0,
            ErrorKind::Config, "distill.lambda must be finite and >= 0");
    require(distill->temperature > 0.0, ErrorKind::Config,
            "distill.temperature must be > 0");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {
      {"base_lr", base_lr},
      {"lr_min", lr_min},
      {"lr_max", lr_max},
      {"momentum", momentum},
      {"total_iters", total_iters},
      {"swa_extra_iters", swa_extra_iters},
      {"snapshot_interval", snapshot_interval},
      {"cycle_length", cycle_length},
      {"batch_frames", batch_frames},
      {"hidden_dim", hidden_dim},
      {"loss_kind", loss_kind_name(loss_kind)},
      {"ohem_conf_threshold", ohem_conf_threshold},
      {"tau", tau},
      {"cosine_scale", cosine_scale},
      {"seed", seed},
  };
  j["ohem_min_keep"] =
      ohem_min_keep.has_value() ? nlohmann::json(*ohem_min_keep) : nullptr;
  if (distill.has_value()) {
    j["distill"] = {{"teacher_checkpoint", distill->teacher_checkpoint},
                    {"lambda", distill->lambda},
                    {"temperature", distill->temperature}};
  } else {
    j["distill"] = nullptr;
  }
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "base_lr",       "lr_min",         "lr_max",
      "momentum",      "total_iters",    "swa_extra_iters",
      "snapshot_interval", "cycle_length", "batch_frames",
      "hidden_dim",    "loss_kind",      "ohem_conf_threshold",
      "ohem_min_keep", "tau",            "cosine_scale",
      "distill",       "seed",
  };
  require(j.is_object(), ErrorKind::Config, "train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) > 0, ErrorKind::Config,
            "unknown train config key: " + key);
  }

  TrainConfig cfg;
  try {
    if (j.contains("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
    if (j.contains("lr_min")) cfg.lr_min = j.at("lr_min").get<double>();
    if (j.contains("lr_max")) cfg.lr_max = j.at("lr_max").get<double>();
    if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
    if (j.contains("total_iters")) cfg.total_iters = j.at("total_iters").get<std::int64_t>();
    if (j.contains("swa_extra_iters")) {
      cfg.swa_extra_iters = j.at("swa_extra_iters").get<std::int64_t>();
    }
    if (j.contains("snapshot_interval")) {
      cfg.snapshot_interval = j.at("snapshot_interval").get<std::int64_t>();
    }
    cfg.cycle_length = j.contains("cycle_length")
                           ? j.at("cycle_length").get<std::int64_t>()
                           : cfg.snapshot_interval;
    if (j.contains("batch_frames")) cfg.batch_frames = j.at("batch_frames").get<int>();
    if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<int>();
    if (j.contains("loss_kind")) {
      cfg.loss_kind = loss_kind_from_name(j.at("loss_kind").get<std::string>());
    }
    if (j.contains("ohem_conf_threshold")) {
      cfg.ohem_conf_threshold = j.at("ohem_conf_threshold").get<double>();
    }
    if (j.contains("ohem_min_keep") && !j.at("ohem_min_keep").is_null()) {
      cfg.ohem_min_keep = j.at("ohem_min_keep").get<std::int64_t>();
    }
    if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
    if (j.contains("cosine_scale")) cfg.cosine_scale = j.at("cosine_scale").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("distill") && !j.at("distill").is_null()) {
      const nlohmann::json& d = j.at("distill");
      static const std::set<std::string> distill_keys = {"teacher_checkpoint",
                                                         "lambda", "temperature"};
      for (const auto& [key, value] : d.items()) {
        require(distill_keys.count(key) > 0, ErrorKind::Config,
                "unknown distill config key: " + key);
      }
      DistillConfig distill;
      distill.teacher_checkpoint = d.at("teacher_checkpoint").get<std::string>();
      if (d.contains("lambda")) distill.lambda = d.at("lambda").get<double>();
      if (d.contains("temperature")) {
        distill.temperature = d.at("temperature").get<double>();
      }
      cfg.distill = distill;
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string("bad train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

double cyclic_lr(std::int64_t t, const TrainConfig& cfg) {
  require(t >= 0, ErrorKind::Config, "cyclic_lr needs t >= 0");
  require(cfg.cycle_length >= 1, ErrorKind::Config,
          "cyclic_lr needs cycle_length >= 1");
  const auto c = static_cast<double>(cfg.cycle_length);
  const auto phase = static_cast<double>(t % cfg.cycle_length);
  return cfg.lr_min +
         0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase / c));
}

TrainResult train(const TrainConfig& cfg, const datagen::Dataset& train_data,
                  const datagen::Dataset* val_data) {
  cfg.validate();
  require(!train_data.videos.empty() && !train_data.videos.front().frames.empty(),
          ErrorKind::EmptyData, "training dataset has no frames");

  std::vector<const datagen::Frame*> frames;
  for (const datagen::Video& video : train_data.videos) {
    for (const datagen::Frame& frame : video.frames) frames.push_back(&frame);
  }

  TrainResult result;
  result.prior = datagen::compute_prior(train_data);

  const model::HeadKind head_kind = cfg.loss_kind == LossKind::LaCe
                                        ? model::HeadKind::CosineLa
                                        : model::HeadKind::Standard;
  Rng init_rng(mix_seed(cfg.seed, kInitStream));
  model::ModelParams params =
      model::init_params(train_data.config.feature_dim, cfg.hidden_dim,
                         train_data.config.num_classes, head_kind, cfg.tau, init_rng);
  params.cosine_scale = cfg.cosine_scale;

  // Frozen teacher, loaded once; lambda = 0 skips the KL term entirely.
  std::optional<model::ModelParams> teacher;
  if (cfg.distill.has_value()) {
    model::Checkpoint teacher_ckpt = model::load_swck(cfg.distill->teacher_checkpoint);
    model::Checkpoint student_shape;
    student_shape.params = params;
    model::require_compatible(student_shape, teacher_ckpt);
    teacher = std::move(teacher_ckpt.params);
  }

  const std::string config_digest = digest_of(cfg.to_json().dump());
  Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> queue;

  model::ModelParams velocity = params;
  velocity.w1.fill(0.0);
  velocity.b1.fill(0.0);
  velocity.w2.fill(0.0);
  velocity.b2.fill(0.0);

  const std::int64_t total = cfg.total_iters + cfg.swa_extra_iters;
  const auto eval_due = [&](std::int64_t iter) {
    if (val_data == nullptr) return false;
    if (iter == total) return true;
    return cfg.snapshot_interval > 0 && iter % cfg.snapshot_interval == 0;
  };

  for (std::int64_t iter = 1; iter <= total; ++iter) {
    const bool swa_phase = iter > cfg.total_iters;
    const double lr =
        swa_phase ? cyclic_lr(iter - cfg.total_iters - 1, cfg) : cfg.base_lr;

    std::vector<const datagen::Frame*> batch;
    for (int b = 0; b < cfg.batch_frames; ++b) {
      if (queue.empty()) {
        queue.resize(frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) queue[i] = i;
        shuffle_rng.shuffle(queue);
        // draw from the back so earlier picks keep their shuffled order
        std::reverse(queue.begin(), queue.end());
      }
      batch.push_back(frames[queue.back()]);
      queue.pop_back();
    }

    std::vector<FrameGrad> grads(batch.size());
    try {
      parallel_for(batch.size(), [&](std::size_t i) {
        grads[i] = frame_gradient(params, *batch[i], result.prior, cfg,
                                  teacher.has_value() ? &*teacher : nullptr);
      });
    } catch (const Error& e) {
      // a numeric blow-up mid-step is divergence, reported with the iteration
      if (e.kind() != ErrorKind::Numeric) throw;
      throw Error(ErrorKind::TrainingDiverged,
                  "training diverged at iteration " + std::to_string(iter));
    }

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    std::size_t selected = 0;
    Tensor dw1(params.w1.shape()), db1(params.b1.shape());
    Tensor dw2(params.w2.shape()), db2(params.b2.shape());
    for (const FrameGrad& g : grads) {  // fixed order, independent of threads
      loss += g.loss;
      selected += g.selected;
      axpy(dw1, g.dw1, inv_batch);
      axpy(db1, g.db1, inv_batch);
      axpy(dw2, g.dw2, inv_batch);
      axpy(db2, g.db2, inv_batch);
    }
    loss *= inv_batch;
    require(std::isfinite(loss), ErrorKind::TrainingDiverged,
            "training diverged at iteration " + std::to_string(iter));

    auto step = [&](Tensor& p, Tensor& v, const Tensor& g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        p[i] -= lr * v[i];
      }
    };
    step(params.w1, velocity.w1, dw1);
    step(params.b1, velocity.b1, db1);
    step(params.w2, velocity.w2, dw2);
    step(params.b2, velocity.b2, db2);

    nlohmann::json record = {{"iter", iter}, {"lr", lr}, {"train_loss", loss}};
    if (cfg.loss_kind == LossKind::CeOhem) record["selected_count"] = selected;
    if (eval_due(iter)) {
      record["val_miou"] = evaluate_dataset(params, *val_data).miou;
    }
    result.log.push_back(std::move(record));

    if (swa_phase && (iter - cfg.total_iters) % cfg.snapshot_interval == 0) {
      model::Checkpoint snapshot;
      snapshot.params = params;
      snapshot.iteration = iter;
      snapshot.rng_state_digest = shuffle_rng.state_digest();
      snapshot.config_digest = config_digest;
      result.snapshots.push_back(std::move(snapshot));
    }
  }

  result.final_checkpoint.params = std::move(params);
  result.final_checkpoint.iteration = total;
  result.final_checkpoint.rng_state_digest = shuffle_rng.state_digest();
  result.final_checkpoint.config_digest = config_digest;
  return result;
}

metrics::IoUReport evaluate_dataset(const model::ModelParams& params,
                                    const datagen::Dataset& dataset) {
  require(!dataset.videos.empty(), ErrorKind::EmptyData, "dataset has no videos");
  std::vector<const datagen::Frame*> frames;
  for (const datagen::Video& video : dataset.videos) {
    for (const datagen::Frame& frame : video.frames) frames.push_back(&frame);
  }
  require(!frames.empty(), ErrorKind::EmptyData, "dataset has no frames");

  std::vector<metrics::Confusion> partial(
      frames.size(), metrics::Confusion(dataset.config.num_classes));
  parallel_for(frames.size(), [&](std::size_t i) {
    const Tensor logits = model::forward_logits(params, frames[i]->features,
                                                nullptr, model::HeadMode::Infer);
    partial[i].accumulate(ensemble::argmax_labels(logits), frames[i]->labels);
  });

  metrics::Confusion confusion(dataset.config.num_classes);
  for (const metrics::Confusion& c : partial) confusion.merge(c);
  return metrics::miou(confusion);
}

}  // namespace seg::trainer
