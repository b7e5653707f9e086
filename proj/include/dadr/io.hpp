#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dadr::io {

/// Binary PGM (P5). 16-bit files store [-1, 1] images as round((v + 1) / 2 * 65535).
void write_image_pgm16(const std::filesystem::path& path, const torch::Tensor& image);
/// 8-bit PGM of a [-1, 1] image, for viewing.
void write_image_pgm8(const std::filesystem::path& path, const torch::Tensor& image);
/// Binary mask as 0/255 8-bit PGM.
void write_mask_pgm(const std::filesystem::path& path, const torch::Tensor& mask);

/// Reads an 8- or 16-bit PGM back into a (1, H, W) float tensor in [-1, 1].
torch::Tensor read_image_pgm(const std::filesystem::path& path);
/// Reads a mask PGM into (H, W) uint8 with values {0, 1}.
torch::Tensor read_mask_pgm(const std::filesystem::path& path);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
/// One dump() per line, atomically replacing `path`.
void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace dadr::io
