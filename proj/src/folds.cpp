#include "dadr/folds.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <random>
#include <set>

#include "dadr/errors.hpp"

namespace dadr::experiments {

std::map<int64_t, int> kfold_split(const std::vector<int64_t>& scene_ids, int k, uint64_t seed) {
  if (k < 1) throw ConfigError("kfold_split: k must be >= 1");
  std::set<int64_t> unique(scene_ids.begin(), scene_ids.end());
  if (static_cast<int64_t>(unique.size()) < k) {
    throw ConfigError(fmt::format("kfold_split: {} scenes cannot fill {} folds", unique.size(), k));
  }
  std::vector<int64_t> order(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  // Fisher-Yates with our own index draws keeps the split identical across
  // standard library implementations.
  for (size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::map<int64_t, int> folds;
  for (size_t i = 0; i < order.size(); ++i) folds[order[i]] = static_cast<int>(i % static_cast<size_t>(k));
  return folds;
}

}  // namespace dadr::experiments
