#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

struct GradCheck {
  double max_rel_error = 0.0;
  int64_t checked = 0;
};

/// Compares autograd gradients of the scalar `loss()` with respect to every
/// tensor in `wrt` against central finite differences, probing at most
/// `max_entries` randomly chosen elements per tensor. Tensors must be double.
inline GradCheck finite_difference_check(const std::function<torch::Tensor()>& loss,
                                         const std::vector<torch::Tensor>& wrt, int64_t max_entries = 24,
                                         double h = 1e-6, uint64_t seed = 7) {
  for (auto t : wrt) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  auto l = loss();
  auto grads = torch::autograd::grad({l}, wrt, {}, /*retain_graph=*/false, /*create_graph=*/false,
                                     /*allow_unused=*/true);
  std::mt19937_64 rng(seed);
  GradCheck out;
  torch::NoGradGuard no_grad;
  for (size_t k = 0; k < wrt.size(); ++k) {
    auto flat = wrt[k].view({-1});
    const auto n = flat.numel();
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(std::min(n, max_entries)));
    auto analytic = grads[k].defined() ? grads[k].reshape({-1}) : torch::zeros_like(flat);
    for (auto i : idx) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss().item<double>();
      flat[i] = orig - h;
      const double down = loss().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].item<double>();
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dadr-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testing
