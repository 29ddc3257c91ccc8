#pragma once

#include <span>
#include <vector>

#include "seg/model.hpp"

namespace seg::swa {

/// Pairwise (cascade) summation. Error grows O(log n) instead of O(n).
double pairwise_sum(std::span<const double> values);

/// Element-wise arithmetic mean of snapshot parameters. Each coordinate is
/// gathered across snapshots, sorted by value, pairwise-summed and divided
/// once, which makes the result exactly independent of snapshot order.
/// iteration is the max over inputs; digests are combined order-independently.
model::Checkpoint average_checkpoints(const std::vector<model::Checkpoint>& snapshots);

}  // namespace seg::swa
