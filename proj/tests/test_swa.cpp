#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "seg/error.hpp"
#include "seg/model.hpp"
#include "seg/rng.hpp"
#include "seg/swa.hpp"

namespace md = seg::model;
using seg::Tensor;

namespace {

md::Checkpoint random_checkpoint(seg::Rng& rng, std::int64_t iteration) {
  md::Checkpoint ck;
  ck.params = md::init_params(3, 4, 5, md::HeadKind::CosineLa, 0.03, rng);
  for (double& v : ck.params.b1.values()) v = rng.next_gaussian();
  for (double& v : ck.params.b2.values()) v = rng.next_gaussian();
  ck.iteration = iteration;
  ck.rng_state_digest = std::to_string(iteration);
  ck.config_digest = "cfg";
  return ck;
}

long double long_double_mean(const std::vector<md::Checkpoint>& sns,
                             const Tensor md::ModelParams::* member, std::size_t i) {
  long double acc = 0.0L;
  for (const md::Checkpoint& ck : sns) acc += (ck.params.*member)[i];
  return acc / static_cast<long double>(sns.size());
}

}  // namespace

TEST_CASE("pairwise sum agrees with long double accumulation") {
  seg::Rng rng(3);
  std::vector<double> values(1000);
  long double acc = 0.0L;
  for (double& v : values) {
    v = rng.next_gaussian() * std::pow(10.0, rng.next_below(6));
    acc += v;
  }
  const double got = seg::swa::pairwise_sum(values);
  CHECK(got == doctest::Approx(static_cast<double>(acc)).epsilon(1e-13));

  CHECK(seg::swa::pairwise_sum(std::span<const double>{}) == 0.0);
  const std::vector<double> one = {42.0};
  CHECK(seg::swa::pairwise_sum(one) == 42.0);
}

TEST_CASE("average of a single checkpoint is the checkpoint") {
  seg::Rng rng(5);
  const md::Checkpoint ck = random_checkpoint(rng, 17);
  const md::Checkpoint avg = seg::swa::average_checkpoints({ck});
  for (std::size_t i = 0; i < ck.params.w1.size(); ++i) {
    CHECK(avg.params.w1[i] == ck.params.w1[i]);
  }
  CHECK(avg.iteration == 17);
}

TEST_CASE("average matches an extended-precision oracle") {
  seg::Rng rng(7);
  std::vector<md::Checkpoint> sns;
  for (int k = 0; k < 8; ++k) sns.push_back(random_checkpoint(rng, 100 + k));
  const md::Checkpoint avg = seg::swa::average_checkpoints(sns);

  const Tensor md::ModelParams::* members[] = {
      &md::ModelParams::w1, &md::ModelParams::b1,
      &md::ModelParams::w2, &md::ModelParams::b2};
  for (auto member : members) {
    const Tensor& out = avg.params.*member;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const long double oracle = long_double_mean(sns, member, i);
      CHECK(std::abs(out[i] - static_cast<double>(oracle)) <= 1e-12);
    }
  }
  CHECK(avg.iteration == 107);
  CHECK(avg.params.head_kind == md::HeadKind::CosineLa);
  CHECK(avg.params.tau == sns.front().params.tau);
}

TEST_CASE("average is bitwise invariant to snapshot order") {
  seg::Rng rng(11);
  std::vector<md::Checkpoint> sns;
  for (int k = 0; k < 6; ++k) sns.push_back(random_checkpoint(rng, k));
  const md::Checkpoint base = seg::swa::average_checkpoints(sns);

  seg::Rng shuffler(999);
  std::vector<std::size_t> order(sns.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int round = 0; round < 10; ++round) {
    shuffler.shuffle(order);
    std::vector<md::Checkpoint> permuted;
    for (std::size_t i : order) permuted.push_back(sns[i]);
    const md::Checkpoint avg = seg::swa::average_checkpoints(permuted);
    for (std::size_t i = 0; i < base.params.w1.size(); ++i) {
      CHECK(avg.params.w1[i] == base.params.w1[i]);
    }
    for (std::size_t i = 0; i < base.params.w2.size(); ++i) {
      CHECK(avg.params.w2[i] == base.params.w2[i]);
    }
    for (std::size_t i = 0; i < base.params.b1.size(); ++i) {
      CHECK(avg.params.b1[i] == base.params.b1[i]);
    }
    CHECK(avg.iteration == base.iteration);
    CHECK(avg.rng_state_digest == base.rng_state_digest);
    CHECK(avg.config_digest == base.config_digest);
  }
}

TEST_CASE("identical snapshots average back to themselves within rounding") {
  // (x + x + x) / 3 can round, so equality holds only to machine precision
  seg::Rng rng(13);
  const md::Checkpoint ck = random_checkpoint(rng, 3);
  const std::vector<md::Checkpoint> sns = {ck, ck, ck};
  const md::Checkpoint avg = seg::swa::average_checkpoints(sns);
  for (std::size_t i = 0; i < ck.params.w1.size(); ++i) {
    CHECK(avg.params.w1[i] == doctest::Approx(ck.params.w1[i]).epsilon(1e-14));
  }
  CHECK(avg.config_digest == "cfg");
}

TEST_CASE("empty and incompatible snapshot lists are rejected") {
  CHECK_THROWS_AS(seg::swa::average_checkpoints({}), seg::Error);
  try {
    seg::swa::average_checkpoints({});
  } catch (const seg::Error& e) {
    CHECK(e.kind() == seg::ErrorKind::EmptyInput);
  }

  seg::Rng rng(17);
  md::Checkpoint a = random_checkpoint(rng, 0);
  md::Checkpoint b = random_checkpoint(rng, 1);
  b.params.tau = 0.5;
  CHECK_THROWS_AS(seg::swa::average_checkpoints({a, b}), seg::Error);
  try {
    seg::swa::average_checkpoints({a, b});
  } catch (const seg::Error& e) {
    CHECK(e.kind() == seg::ErrorKind::CheckpointIncompatible);
  }
}
