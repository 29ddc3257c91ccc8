#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "seg/datagen.hpp"
#include "seg/rng.hpp"
#include "seg/tensor.hpp"

namespace seg::model {

enum class HeadKind { Standard, CosineLa };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

/// Two-layer pointwise network: ReLU(x W1 + b1) feeding either a plain linear
/// head or a cosine head with a fixed class-prior bias. In the cosine head the
/// bias b2 is unused; the only additive term is tau * log(pi_y), injected at
/// call time and never learned.
struct ModelParams {
  Tensor w1;  // [D, hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [hidden, L]
  Tensor b2;  // [L]
  HeadKind head_kind = HeadKind::Standard;
  double tau = 0.03;
  double eps_norm = 1e-8;     // norm floor for zero features / weights
  double cosine_scale = 1.0;  // multiplier on the cosine term

  std::size_t feature_dim() const { return w1.extent(0); }
  std::size_t hidden_dim() const { return w1.extent(1); }
  std::size_t num_classes() const { return w2.extent(1); }

  void validate() const;
};

ModelParams init_params(int feature_dim, int hidden_dim, int num_classes,
                        HeadKind head_kind, double tau, Rng& rng);

/// Per pixel: ReLU(x W1 + b1). Input [H, W, D] (or [N, D]), output keeps the
/// leading extents with the last axis replaced by hidden_dim.
Tensor extract_features(const ModelParams& params, const Tensor& x);

Tensor head_standard(const ModelParams& params, const Tensor& feats);

enum class HeadMode { Train, Infer };

/// Cosine-similarity logits between normalized class weights and features.
/// Train mode adds the fixed prior bias tau * log(pi_y); infer mode returns
/// the residual cosine logits only, so predictions do not depend on the prior.
/// `prior` may be null in infer mode.
Tensor head_cosine_la(const ModelParams& params, const Tensor& feats,
                      const datagen::ClassPrior* prior, HeadMode mode);

struct HeadGrads {
  Tensor dw2;
  Tensor db2;     // zero for the cosine head
  Tensor dfeats;
};

HeadGrads head_standard_vjp(const ModelParams& params, const Tensor& feats,
                            const Tensor& dlogits);

// Backward pass of the cosine head. The quotient rule contributes one term
// through each norm; coordinates clamped at eps_norm have zero norm-gradient.
HeadGrads head_cosine_vjp(const ModelParams& params, const Tensor& feats,
                          const Tensor& dlogits);

struct FeatureGrads {
  Tensor dw1;
  Tensor db1;
};

FeatureGrads extract_features_vjp(const ModelParams& params, const Tensor& x,
                                  const Tensor& dfeats);

// Convenience forward pass: features then the configured head.
Tensor forward_logits(const ModelParams& params, const Tensor& x,
                      const datagen::ClassPrior* prior, HeadMode mode);

struct Checkpoint {
  ModelParams params;
  std::int64_t iteration = 0;
  std::string rng_state_digest;
  std::string config_digest;
};

// Throws checkpoint-incompatible if parameter shapes or head settings differ.
void require_compatible(const Checkpoint& a, const Checkpoint& b);

// SWCK container: "SWCK" magic, JSON header naming parameters and shapes,
// then f32 parameter blobs in header order.
void save_swck(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_swck(const std::filesystem::path& path);

}  // namespace seg::model
