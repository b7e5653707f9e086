#include "dadr/checkpoint.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dadr/errors.hpp"
#include "dadr/io.hpp"

namespace dadr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'A', 'D', 'R', 'C', 'K', 'P', 'T'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw ConfigError(fmt::format("checkpoint: unsupported dtype {}", c10::toString(t)));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw ConfigError(fmt::format("checkpoint: unknown dtype '{}'", name));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const torch::nn::Module& module, nlohmann::json config, int64_t step,
                           const at::Generator* rng) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  ckpt.step = step;
  if (rng != nullptr) ckpt.rng_state = rng->get_state().clone();
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    ckpt.tensors.emplace_back(p.key(), p.value().detach().clone());
  }
  for (const auto& b : module.named_buffers(/*recurse=*/true)) {
    ckpt.tensors.emplace_back(b.key(), b.value().detach().clone());
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  auto append = [&](const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<size_t>(c.numel()) * c.element_size();
    const auto offset = blob.size();
    blob.append(static_cast<const char*>(c.data_ptr()), nbytes);
    return std::pair{offset, nbytes};
  };

  nlohmann::json header;
  header["format"] = "dadr-checkpoint";
  header["version"] = kVersion;
  header["config"] = ckpt.config;
  header["step"] = ckpt.step;
  if (ckpt.rng_state) {
    auto [off, n] = append(*ckpt.rng_state);
    header["rng_state"] = {{"offset", off}, {"nbytes", n}};
  } else {
    header["rng_state"] = nullptr;
  }
  for (const auto& [name, t] : ckpt.tensors) {
    const auto dtype = dtype_name(t.scalar_type());
    auto [off, n] = append(t);
    index.push_back({{"name", name}, {"dtype", dtype}, {"shape", t.sizes().vec()}, {"offset", off}, {"nbytes", n}});
  }
  header["tensors"] = std::move(index);

  const auto text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  out += blob;
  io::write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open checkpoint {}", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError(fmt::format("{}: not a checkpoint file", path.string()));
  }
  const auto header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw ConfigError(fmt::format("{}: truncated header", path.string()));
  const auto header = nlohmann::json::parse(bytes.substr(16, header_len));
  if (header.value("format", "") != "dadr-checkpoint" || header.value("version", 0) != kVersion) {
    throw ConfigError(fmt::format("{}: unsupported checkpoint format", path.string()));
  }
  const char* blob = bytes.data() + 16 + header_len;
  const auto blob_size = bytes.size() - 16 - header_len;
  auto slice = [&](uint64_t off, uint64_t n) {
    if (off + n > blob_size) throw ConfigError(fmt::format("{}: tensor data out of range", path.string()));
    return blob + off;
  };

  Checkpoint ckpt;
  ckpt.config = header.at("config");
  ckpt.step = header.at("step");
  if (!header.at("rng_state").is_null()) {
    const auto n = header["rng_state"]["nbytes"].get<uint64_t>();
    const char* src = slice(header["rng_state"]["offset"].get<uint64_t>(), n);
    auto t = torch::empty({static_cast<int64_t>(n)}, torch::kUInt8);
    std::memcpy(t.data_ptr(), src, n);
    ckpt.rng_state = t;
  }
  for (const auto& e : header.at("tensors")) {
    const auto dtype = dtype_from(e.at("dtype").get<std::string>());
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const auto n = e.at("nbytes").get<uint64_t>();
    auto t = torch::empty(shape, dtype);
    if (static_cast<uint64_t>(t.numel()) * t.element_size() != n) {
      throw ConfigError(fmt::format("{}: size mismatch for tensor {}", path.string(), e.at("name").get<std::string>()));
    }
    std::memcpy(t.data_ptr(), slice(e.at("offset").get<uint64_t>(), n), n);
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void restore_module(torch::nn::Module& module, const Checkpoint& ckpt) {
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError(fmt::format("checkpoint is missing tensor '{}'", name));
    if (it->second->sizes() != dst.sizes()) {
      throw ConfigError(fmt::format("checkpoint tensor '{}' has shape {}, model expects {}", name,
                                    fmt::join(it->second->sizes(), "x"), fmt::join(dst.sizes(), "x")));
    }
    dst.copy_(*it->second);
    by_name.erase(it);
  };
  for (auto& p : module.named_parameters(/*recurse=*/true)) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers(/*recurse=*/true)) copy_into(b.key(), b.value());
  if (!by_name.empty()) {
    throw ConfigError(fmt::format("checkpoint has {} tensors the model does not know (first: '{}')",
                                  by_name.size(), by_name.begin()->first));
  }
}

void restore_generator(at::Generator& gen, const Checkpoint& ckpt) {
  if (ckpt.rng_state) gen.set_state(*ckpt.rng_state);
}

}  // namespace dadr
