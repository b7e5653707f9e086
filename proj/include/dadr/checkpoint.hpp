#pragma once

// Checkpoint container.
//
//   bytes 0..7    magic "DADRCKPT"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  UTF-8 JSON header:
//                   {"format": "dadr-checkpoint", "version": 1,
//                    "config": {...}, "step": N,
//                    "rng_state": {"offset": o, "nbytes": n} | null,
//                    "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   rest          data blob; offsets are relative to its first byte and every
//                 value is stored little-endian in row-major order.
//
// dtype is one of "f32", "f64", "i64", "u8".

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dadr {

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  int64_t step = 0;
  std::optional<torch::Tensor> rng_state;  // uint8 bytes of a CPU generator
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

/// Collects every named parameter and buffer of `module`.
Checkpoint make_checkpoint(const torch::nn::Module& module, nlohmann::json config, int64_t step,
                           const at::Generator* rng = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into `module` by name. Every parameter and buffer must be
/// present with identical shape; throws ConfigError otherwise.
void restore_module(torch::nn::Module& module, const Checkpoint& ckpt);

/// Restores a generator's state from the checkpoint, if one was stored.
void restore_generator(at::Generator& gen, const Checkpoint& ckpt);

}  // namespace dadr
