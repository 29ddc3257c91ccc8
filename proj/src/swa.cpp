#include "seg/swa.hpp"

#include <algorithm>
#include <string>

#include "seg/digest.hpp"
#include "seg/error.hpp"

namespace seg::swa {

namespace {

std::string combine_digests(std::vector<std::string> digests, const char* tag) {
  std::sort(digests.begin(), digests.end());
  std::string joined = tag;
  for (const std::string& d : digests) {
    joined += ':';
    joined += d;
  }
  return digest_of(joined);
}

Tensor mean_tensor(const std::vector<const Tensor*>& tensors) {
  const std::size_t n = tensors.size();
  Tensor out(tensors.front()->shape());
  std::vector<double> column(n);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t s = 0; s < n; ++s) column[s] = (*tensors[s])[i];
    std::sort(column.begin(), column.end());
    out[i] = pairwise_sum(column) / static_cast<double>(n);
  }
  return out;
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

model::Checkpoint average_checkpoints(const std::vector<model::Checkpoint>& snapshots) {
  require(!snapshots.empty(), ErrorKind::EmptyInput,
          "no snapshots to average");
  if (snapshots.size() == 1) return snapshots.front();

  for (std::size_t i = 1; i < snapshots.size(); ++i) {
    model::require_compatible(snapshots.front(), snapshots[i]);
  }

  model::Checkpoint out = snapshots.front();
  auto gather = [&](const Tensor model::ModelParams::* member) {
    std::vector<const Tensor*> tensors;
    tensors.reserve(snapshots.size());
    for (const model::Checkpoint& c : snapshots) tensors.push_back(&(c.params.*member));
    return mean_tensor(tensors);
  };
  out.params.w1 = gather(&model::ModelParams::w1);
  out.params.b1 = gather(&model::ModelParams::b1);
  out.params.w2 = gather(&model::ModelParams::w2);
  out.params.b2 = gather(&model::ModelParams::b2);

  out.iteration = 0;
  std::vector<std::string> rng_digests;
  std::vector<std::string> config_digests;
  for (const model::Checkpoint& c : snapshots) {
    out.iteration = std::max(out.iteration, c.iteration);
    rng_digests.push_back(c.rng_state_digest);
    config_digests.push_back(c.config_digest);
  }
  out.rng_state_digest = combine_digests(std::move(rng_digests), "swa-rng");
  const bool same_config = std::all_of(
      snapshots.begin(), snapshots.end(), [&](const model::Checkpoint& c) {
        return c.config_digest == snapshots.front().config_digest;
      });
  if (!same_config) {
    out.config_digest = combine_digests(std::move(config_digests), "swa-config");
  }
  return out;
}

}  // namespace seg::swa
