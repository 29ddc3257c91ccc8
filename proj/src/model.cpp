#include "seg/model.hpp"

#include <algorithm>
#include <cmath>

#include "seg/binio.hpp"
#include "seg/error.hpp"

namespace seg::model {

namespace {

std::vector<std::size_t> with_last_axis(const Tensor& t, std::size_t extent) {
  std::vector<std::size_t> shape = t.shape();
  shape.back() = extent;
  return shape;
}

// Per-class weight norms with the eps_norm floor; flags mark floored classes.
void class_weight_norms(const ModelParams& params, std::vector<double>& norms,
                        std::vector<bool>& floored) {
  const std::size_t hidden = params.hidden_dim();
  const std::size_t classes = params.num_classes();
  norms.resize(classes);
  floored.resize(classes);
  for (std::size_t y = 0; y < classes; ++y) {
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < hidden; ++k) {
      const double w = params.w2[k * classes + y];
      sum_sq += w * w;
    }
    const double norm = std::sqrt(sum_sq);
    floored[y] = norm <= params.eps_norm;
    norms[y] = std::max(norm, params.eps_norm);
  }
}

}  // namespace

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::Standard ? "standard" : "cosine_la";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "standard") return HeadKind::Standard;
  if (name == "cosine_la") return HeadKind::CosineLa;
  raise(ErrorKind::Config, "unknown head kind: " + name);
}

void ModelParams::validate() const {
  require(w1.rank() == 2 && w2.rank() == 2 && b1.rank() == 1 && b2.rank() == 1,
          ErrorKind::InvalidShape, "model parameters have unexpected ranks");
  require(b1.extent(0) == hidden_dim() && w2.extent(0) == hidden_dim() &&
              b2.extent(0) == num_classes(),
          ErrorKind::InvalidShape, "model parameter shapes are inconsistent");
  require(tau >= 0.0, ErrorKind::Config, "tau must be >= 0");
  require(eps_norm > 0.0, ErrorKind::Config, "eps_norm must be > 0");
  require(cosine_scale > 0.0, ErrorKind::Config, "cosine_scale must be > 0");
}

ModelParams init_params(int feature_dim, int hidden_dim, int num_classes,
                        HeadKind head_kind, double tau, Rng& rng) {
  require(feature_dim >= 1 && hidden_dim >= 1 && num_classes >= 2,
          ErrorKind::Config, "model dimensions out of range");
  const auto d = static_cast<std::size_t>(feature_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto l = static_cast<std::size_t>(num_classes);

  ModelParams params;
  params.head_kind = head_kind;
  params.tau = tau;
  params.w1 = Tensor({d, h});
  params.b1 = Tensor({h});
  params.w2 = Tensor({h, l});
  params.b2 = Tensor({l});

  const double scale1 = std::sqrt(2.0 / feature_dim);
  for (std::size_t i = 0; i < params.w1.size(); ++i) {
    params.w1[i] = rng.next_gaussian() * scale1;
  }
  const double scale2 = std::sqrt(1.0 / hidden_dim);
  for (std::size_t i = 0; i < params.w2.size(); ++i) {
    params.w2[i] = rng.next_gaussian() * scale2;
  }
  return params;
}

Tensor extract_features(const ModelParams& params, const Tensor& x) {
  params.validate();
  require(x.last_extent() == params.feature_dim(), ErrorKind::InvalidShape,
          "input feature dimension does not match W1");
  const std::size_t pixels = x.slice_count();
  const std::size_t d = params.feature_dim();
  const std::size_t h = params.hidden_dim();

  Tensor out(with_last_axis(x, h));
  const double* in = x.data();
  double* feat = out.data();
  for (std::size_t p = 0; p < pixels; ++p, in += d, feat += h) {
    for (std::size_t k = 0; k < h; ++k) {
      double acc = params.b1[k];
      for (std::size_t j = 0; j < d; ++j) acc += in[j] * params.w1[j * h + k];
      feat[k] = acc > 0.0 ? acc : 0.0;
    }
  }
  return out;
}

Tensor head_standard(const ModelParams& params, const Tensor& feats) {
  require(params.head_kind == HeadKind::Standard, ErrorKind::Usage,
          "head_standard called on a cosine_la model");
  require(feats.last_extent() == params.hidden_dim(), ErrorKind::InvalidShape,
          "feature dimension does not match W2");
  const std::size_t pixels = feats.slice_count();
  const std::size_t h = params.hidden_dim();
  const std::size_t l = params.num_classes();

  Tensor logits(with_last_axis(feats, l));
  const double* f = feats.data();
  double* z = logits.data();
  for (std::size_t p = 0; p < pixels; ++p, f += h, z += l) {
    for (std::size_t y = 0; y < l; ++y) {
      double acc = params.b2[y];
      for (std::size_t k = 0; k < h; ++k) acc += f[k] * params.w2[k * l + y];
      z[y] = acc;
    }
  }
  return logits;
}

Tensor head_cosine_la(const ModelParams& params, const Tensor& feats,
                      const datagen::ClassPrior* prior, HeadMode mode) {
  require(params.head_kind == HeadKind::CosineLa, ErrorKind::Usage,
          "head_cosine_la called on a standard-head model");
  require(feats.last_extent() == params.hidden_dim(), ErrorKind::InvalidShape,
          "feature dimension does not match W2");
  const std::size_t l = params.num_classes();

  std::vector<double> bias(l, 0.0);
  if (mode == HeadMode::Train) {
    require(prior != nullptr, ErrorKind::InvalidInput,
            "train-mode cosine head needs a class prior");
    require(prior->pi.size() == l, ErrorKind::InvalidShape,
            "class prior length does not match the head");
    for (std::size_t y = 0; y < l; ++y) bias[y] = params.tau * std::log(prior->pi[y]);
  }

  std::vector<double> weight_norms;
  std::vector<bool> floored;
  class_weight_norms(params, weight_norms, floored);

  const std::size_t pixels = feats.slice_count();
  const std::size_t h = params.hidden_dim();
  Tensor logits(with_last_axis(feats, l));
  const double* f = feats.data();
  double* z = logits.data();
  for (std::size_t p = 0; p < pixels; ++p, f += h, z += l) {
    double feat_sq = 0.0;
    for (std::size_t k = 0; k < h; ++k) feat_sq += f[k] * f[k];
    const double feat_norm = std::max(std::sqrt(feat_sq), params.eps_norm);
    for (std::size_t y = 0; y < l; ++y) {
      double dot = 0.0;
      for (std::size_t k = 0; k < h; ++k) dot += f[k] * params.w2[k * l + y];
      const double cosine = dot / (weight_norms[y] * feat_norm);
      z[y] = params.cosine_scale * cosine + bias[y];
    }
  }
  return logits;
}

HeadGrads head_standard_vjp(const ModelParams& params, const Tensor& feats,
                            const Tensor& dlogits) {
  require(dlogits.last_extent() == params.num_classes(), ErrorKind::InvalidShape,
          "logit gradient shape does not match the head");
  const std::size_t pixels = feats.slice_count();
  const std::size_t h = params.hidden_dim();
  const std::size_t l = params.num_classes();

  HeadGrads grads;
  grads.dw2 = Tensor({h, l});
  grads.db2 = Tensor({l});
  grads.dfeats = Tensor(feats.shape());

  const double* f = feats.data();
  const double* g = dlogits.data();
  double* df = grads.dfeats.data();
  for (std::size_t p = 0; p < pixels; ++p, f += h, g += l, df += h) {
    for (std::size_t y = 0; y < l; ++y) grads.db2[y] += g[y];
    for (std::size_t k = 0; k < h; ++k) {
      double acc = 0.0;
      for (std::size_t y = 0; y < l; ++y) {
        grads.dw2[k * l + y] += f[k] * g[y];
        acc += g[y] * params.w2[k * l + y];
      }
      df[k] = acc;
    }
  }
  return grads;
}

HeadGrads head_cosine_vjp(const ModelParams& params, const Tensor& feats,
                          const Tensor& dlogits) {
  require(dlogits.last_extent() == params.num_classes(), ErrorKind::InvalidShape,
          "logit gradient shape does not match the head");
  const std::size_t pixels = feats.slice_count();
  const std::size_t h = params.hidden_dim();
  const std::size_t l = params.num_classes();
  const double scale = params.cosine_scale;

  std::vector<double> weight_norms;
  std::vector<bool> weight_floored;
  class_weight_norms(params, weight_norms, weight_floored);

  HeadGrads grads;
  grads.dw2 = Tensor({h, l});
  grads.db2 = Tensor({l});  // prior bias is fixed, b2 carries no gradient
  grads.dfeats = Tensor(feats.shape());

  // Per class, accumulated over pixels:
  //   dw2[:,y] = scale * (sum_p g_y f/nf) / nw_y
  //            - scale * (sum_p g_y cos_y) * u_y / nw_y^2   (skipped if floored)
  std::vector<double> weighted_feat_sum(h * l, 0.0);
  std::vector<double> cos_grad_sum(l, 0.0);

  const double* f = feats.data();
  const double* g = dlogits.data();
  double* df = grads.dfeats.data();
  for (std::size_t p = 0; p < pixels; ++p, f += h, g += l, df += h) {
    double feat_sq = 0.0;
    for (std::size_t k = 0; k < h; ++k) feat_sq += f[k] * f[k];
    const double raw_norm = std::sqrt(feat_sq);
    const bool feat_floored = raw_norm <= params.eps_norm;
    const double feat_norm = std::max(raw_norm, params.eps_norm);

    double cos_dot_acc = 0.0;  // sum_y g_y cos_y at this pixel
    for (std::size_t y = 0; y < l; ++y) {
      double dot = 0.0;
      for (std::size_t k = 0; k < h; ++k) dot += f[k] * params.w2[k * l + y];
      const double cosine = dot / (weight_norms[y] * feat_norm);
      cos_dot_acc += g[y] * cosine;
      cos_grad_sum[y] += g[y] * cosine;
      const double feat_coeff = g[y] / feat_norm;
      for (std::size_t k = 0; k < h; ++k) {
        weighted_feat_sum[k * l + y] += feat_coeff * f[k];
        df[k] += scale * g[y] * params.w2[k * l + y] / (weight_norms[y] * feat_norm);
      }
    }
    if (!feat_floored) {
      const double shrink = scale * cos_dot_acc / (feat_norm * feat_norm);
      for (std::size_t k = 0; k < h; ++k) df[k] -= shrink * f[k];
    }
  }

  for (std::size_t y = 0; y < l; ++y) {
    const double inv_norm = 1.0 / weight_norms[y];
    for (std::size_t k = 0; k < h; ++k) {
      double value = scale * weighted_feat_sum[k * l + y] * inv_norm;
      if (!weight_floored[y]) {
        value -= scale * cos_grad_sum[y] * params.w2[k * l + y] * inv_norm * inv_norm;
      }
      grads.dw2[k * l + y] = value;
    }
  }
  return grads;
}

FeatureGrads extract_features_vjp(const ModelParams& params, const Tensor& x,
                                  const Tensor& dfeats) {
  require(x.last_extent() == params.feature_dim(), ErrorKind::InvalidShape,
          "input feature dimension does not match W1");
  require(dfeats.last_extent() == params.hidden_dim(), ErrorKind::InvalidShape,
          "feature gradient shape does not match W1");
  const std::size_t pixels = x.slice_count();
  const std::size_t d = params.feature_dim();
  const std::size_t h = params.hidden_dim();

  FeatureGrads grads;
  grads.dw1 = Tensor({d, h});
  grads.db1 = Tensor({h});

  const double* in = x.data();
  const double* df = dfeats.data();
  for (std::size_t p = 0; p < pixels; ++p, in += d, df += h) {
    for (std::size_t k = 0; k < h; ++k) {
      double pre = params.b1[k];
      for (std::size_t j = 0; j < d; ++j) pre += in[j] * params.w1[j * h + k];
      if (pre <= 0.0) continue;  // ReLU gate
      grads.db1[k] += df[k];
      for (std::size_t j = 0; j < d; ++j) grads.dw1[j * h + k] += in[j] * df[k];
    }
  }
  return grads;
}

Tensor forward_logits(const ModelParams& params, const Tensor& x,
                      const datagen::ClassPrior* prior, HeadMode mode) {
  const Tensor feats = extract_features(params, x);
  if (params.head_kind == HeadKind::Standard) {
    return head_standard(params, feats);
  }
  return head_cosine_la(params, feats, prior, mode);
}

void require_compatible(const Checkpoint& a, const Checkpoint& b) {
  const bool same = a.params.w1.same_shape(b.params.w1) &&
                    a.params.b1.same_shape(b.params.b1) &&
                    a.params.w2.same_shape(b.params.w2) &&
                    a.params.b2.same_shape(b.params.b2) &&
                    a.params.head_kind == b.params.head_kind &&
                    a.params.tau == b.params.tau &&
                    a.params.eps_norm == b.params.eps_norm &&
                    a.params.cosine_scale == b.params.cosine_scale;
  require(same, ErrorKind::CheckpointIncompatible,
          "checkpoints differ in architecture or head settings");
}

void save_swck(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const ModelParams& p = checkpoint.params;
  p.validate();
  require(p.w1.all_finite() && p.b1.all_finite() && p.w2.all_finite() && p.b2.all_finite(),
          ErrorKind::Numeric, "refusing to save a checkpoint with non-finite parameters");

  const nlohmann::json header = {
      {"params",
       {{{"name", "W1"}, {"shape", p.w1.shape()}},
        {{"name", "b1"}, {"shape", p.b1.shape()}},
        {{"name", "W2"}, {"shape", p.w2.shape()}},
        {{"name", "b2"}, {"shape", p.b2.shape()}}}},
      {"head_kind", head_kind_name(p.head_kind)},
      {"tau", p.tau},
      {"eps_norm", p.eps_norm},
      {"cosine_scale", p.cosine_scale},
      {"iteration", checkpoint.iteration},
      {"rng_state_digest", checkpoint.rng_state_digest},
      {"config_digest", checkpoint.config_digest},
  };

  std::ofstream out = binio::open_output(path);
  binio::write_header(out, "SWCK", 1, header);
  binio::write_f32_block(out, p.w1.values());
  binio::write_f32_block(out, p.b1.values());
  binio::write_f32_block(out, p.w2.values());
  binio::write_f32_block(out, p.b2.values());
}

Checkpoint load_swck(const std::filesystem::path& path) {
  std::ifstream in = binio::open_input(path);
  const nlohmann::json header = binio::read_header(in, "SWCK", 1, "SWCK");

  Checkpoint checkpoint;
  ModelParams& p = checkpoint.params;
  try {
    p.head_kind = head_kind_from_name(header.at("head_kind").get<std::string>());
    p.tau = header.at("tau").get<double>();
    p.eps_norm = header.at("eps_norm").get<double>();
    p.cosine_scale = header.at("cosine_scale").get<double>();
    checkpoint.iteration = header.at("iteration").get<std::int64_t>();
    checkpoint.rng_state_digest = header.at("rng_state_digest").get<std::string>();
    checkpoint.config_digest = header.at("config_digest").get<std::string>();

    for (const auto& entry : header.at("params")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      Tensor tensor(shape);
      binio::read_f32_block(in, tensor.values(), "SWCK parameter " + name);
      if (name == "W1") {
        p.w1 = std::move(tensor);
      } else if (name == "b1") {
        p.b1 = std::move(tensor);
      } else if (name == "W2") {
        p.w2 = std::move(tensor);
      } else if (name == "b2") {
        p.b2 = std::move(tensor);
      } else {
        raise(ErrorKind::Io, "unknown parameter name in SWCK header: " + name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Io, std::string("bad SWCK header: ") + e.what());
  }
  p.validate();
  return checkpoint;
}

}  // namespace seg::model
