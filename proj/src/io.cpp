#include "dadr/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dadr/errors.hpp"

namespace dadr::io {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

torch::Tensor as_plane(const torch::Tensor& t, std::string_view what) {
  auto plane = t.detach().to(torch::kCPU).squeeze();
  if (plane.dim() != 2) {
    throw ConfigError(fmt::format("{}: expected a single-channel image", what));
  }
  return plane.contiguous();
}

void write_pgm(const fs::path& path, int64_t width, int64_t height, int maxval,
               const std::vector<unsigned char>& bytes) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainingError(fmt::format("cannot write {}", path.string()));
  out << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TrainingError(fmt::format("short write to {}", path.string()));
}

struct Pgm {
  int64_t width = 0;
  int64_t height = 0;
  int maxval = 0;
  std::vector<int> values;
};

Pgm read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open image {}", path.string()));
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw ConfigError(fmt::format("{}: truncated PGM header", path.string()));
  };
  if (next_token() != "P5") throw ConfigError(fmt::format("{}: not a binary PGM", path.string()));
  Pgm p;
  p.width = std::stoll(next_token());
  p.height = std::stoll(next_token());
  p.maxval = std::stoi(next_token());
  in.get();  // single whitespace before raster
  if (p.width < 1 || p.height < 1 || p.maxval < 1 || p.maxval > 65535) {
    throw ConfigError(fmt::format("{}: bad PGM header", path.string()));
  }
  const auto n = p.width * p.height;
  const int bytes_per = p.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(n * bytes_per));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ConfigError(fmt::format("{}: truncated PGM raster", path.string()));
  }
  p.values.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    p.values[i] = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
  }
  return p;
}

}  // namespace

void write_image_pgm16(const fs::path& path, const torch::Tensor& image) {
  auto plane = as_plane(image, "write_image_pgm16").to(torch::kDouble);
  const auto h = plane.size(0);
  const auto w = plane.size(1);
  auto acc = plane.accessor<double, 2>();
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<size_t>(h * w * 2));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double v = std::clamp(acc[y][x], -1.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround((v + 1.0) / 2.0 * 65535.0));
      bytes.push_back(static_cast<unsigned char>(q >> 8));
      bytes.push_back(static_cast<unsigned char>(q & 0xff));
    }
  }
  write_pgm(path, w, h, 65535, bytes);
}

void write_image_pgm8(const fs::path& path, const torch::Tensor& image) {
  auto plane = as_plane(image, "write_image_pgm8").to(torch::kDouble);
  const auto h = plane.size(0);
  const auto w = plane.size(1);
  auto acc = plane.accessor<double, 2>();
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double v = std::clamp(acc[y][x], -1.0, 1.0);
      bytes.push_back(static_cast<unsigned char>(std::lround((v + 1.0) / 2.0 * 255.0)));
    }
  }
  write_pgm(path, w, h, 255, bytes);
}

void write_mask_pgm(const fs::path& path, const torch::Tensor& mask) {
  auto plane = as_plane(mask, "write_mask_pgm").to(torch::kUInt8);
  const auto h = plane.size(0);
  const auto w = plane.size(1);
  auto acc = plane.accessor<uint8_t, 2>();
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) bytes.push_back(acc[y][x] ? 255 : 0);
  }
  write_pgm(path, w, h, 255, bytes);
}

torch::Tensor read_image_pgm(const fs::path& path) {
  auto p = read_pgm(path);
  auto out = torch::empty({1, p.height, p.width}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int64_t y = 0; y < p.height; ++y) {
    for (int64_t x = 0; x < p.width; ++x) {
      const double v = static_cast<double>(p.values[y * p.width + x]) / p.maxval;
      acc[0][y][x] = static_cast<float>(v * 2.0 - 1.0);
    }
  }
  return out;
}

torch::Tensor read_mask_pgm(const fs::path& path) {
  auto p = read_pgm(path);
  auto out = torch::empty({p.height, p.width}, torch::kUInt8);
  auto acc = out.accessor<uint8_t, 2>();
  for (int64_t y = 0; y < p.height; ++y) {
    for (int64_t x = 0; x < p.width; ++x) acc[y][x] = p.values[y * p.width + x] * 2 > p.maxval ? 1 : 0;
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  ensure_parent(path);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TrainingError(fmt::format("cannot write {}", tmp.string()));
    out << content;
    if (!out) throw TrainingError(fmt::format("short write to {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

void append_jsonl(const fs::path& path, const nlohmann::json& record) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw TrainingError(fmt::format("cannot append to {}", path.string()));
  out << record.dump() << '\n';
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

void write_jsonl_atomic(const fs::path& path, const std::vector<nlohmann::json>& records) {
  std::string content;
  for (const auto& r : records) content += r.dump() + '\n';
  write_file_atomic(path, content);
}

}  // namespace dadr::io
