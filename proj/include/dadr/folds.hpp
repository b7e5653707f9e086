#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace dadr::experiments {

/// Subject-wise k-fold assignment: shuffles the distinct scene ids with `seed`
/// and deals them round-robin, so fold sizes differ by at most one.
/// Throws ConfigError when there are fewer distinct scenes than folds.
std::map<int64_t, int> kfold_split(const std::vector<int64_t>& scene_ids, int k, uint64_t seed);

}  // namespace dadr::experiments
