#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seg/datagen.hpp"
#include "seg/metrics.hpp"
#include "seg/model.hpp"

namespace seg::trainer {

enum class LossKind { Ce, CeOhem, LaCe };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct DistillConfig {
  std::string teacher_checkpoint;
  double lambda = 1.0;
  double temperature = 1.0;
};

struct TrainConfig {
  double base_lr = 0.05;
  double lr_min = 0.005;
  double lr_max = 0.05;
  double momentum = 0.9;
  std::int64_t total_iters = 200;
  std::int64_t swa_extra_iters = 0;
  std::int64_t snapshot_interval = 0;  // also the val evaluation interval
  std::int64_t cycle_length = 0;       // must equal snapshot_interval
  int batch_frames = 4;
  int hidden_dim = 32;
  LossKind loss_kind = LossKind::Ce;
  double ohem_conf_threshold = 0.7;
  // Absent: floor at 5% of each frame's valid pixels. Explicit 0: no floor.
  std::optional<std::int64_t> ohem_min_keep;
  double tau = 0.03;          // cosine head prior weight
  double cosine_scale = 1.0;  // cosine head logit scale
  std::optional<DistillConfig> distill;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys; cycle_length defaults to snapshot_interval.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Cosine schedule within a cycle of cycle_length:
///   lr(t) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi (t mod c) / c)).
double cyclic_lr(std::int64_t t, const TrainConfig& cfg);

struct TrainResult {
  model::Checkpoint final_checkpoint;
  std::vector<model::Checkpoint> snapshots;  // one per completed SWA cycle
  std::vector<nlohmann::json> log;           // one record per iteration
  datagen::ClassPrior prior;                 // training-split class prior
};

/// SGD with momentum. total_iters at base_lr, then swa_extra_iters on the
/// cyclic schedule with a snapshot at the end of every cycle. Deterministic
/// given (config, dataset): shuffling, init and logging all derive from
/// config.seed. A distill block adds lambda * KL toward the frozen teacher;
/// lambda = 0 leaves the trajectory bit-identical to no distill block.
/// val_data may be null; when present, val mIoU is logged every interval.
TrainResult train(const TrainConfig& cfg, const datagen::Dataset& train_data,
                  const datagen::Dataset* val_data);

/// Argmax-prediction mIoU of a model over every frame of a dataset.
metrics::IoUReport evaluate_dataset(const model::ModelParams& params,
                                    const datagen::Dataset& dataset);

}  // namespace seg::trainer
