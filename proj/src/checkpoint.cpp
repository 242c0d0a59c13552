// checkpoint.cpp - part of volsynth.
#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace volsynth {

namespace {
constexpr char kMagic[8] = {'V', 'S', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  require(f.gcount() == 4, errc::corrupt, path + ": truncated checkpoint");
  return v;
}
}  // namespace

ModelWeights snapshot_params(const ad::ParamSet<float>& params,
                             const std::string& arch_tag) {
  ModelWeights w;
  w.arch_tag = arch_tag;
  for (const auto& p : params) w.entries.emplace_back(p.name, p.value);
  return w;
}

void load_params(ad::ParamSet<float>& params, const ModelWeights& w) {
  require(w.entries.size() == params.size(), errc::incompatible,
          "checkpoint holds " + std::to_string(w.entries.size()) +
              " tensors, model expects " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[static_cast<int>(i)];
    const Tensor32* t = w.find(p.name);
    require(t != nullptr, errc::incompatible,
            "checkpoint is missing parameter " + p.name);
    require(t->shape == p.value.shape, errc::incompatible,
            "checkpoint shape mismatch for " + p.name + ": " +
                shape_str(t->shape) + " vs " + shape_str(p.value.shape));
    p.value = *t;
  }
}

void save_checkpoint(const ModelWeights& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), errc::io, "cannot write " + path);
  f.write(kMagic, 8);
  put_u32(f, kVersion);
  put_u32(f, static_cast<uint32_t>(w.arch_tag.size()));
  f.write(w.arch_tag.data(), static_cast<std::streamsize>(w.arch_tag.size()));
  put_u32(f, static_cast<uint32_t>(w.entries.size()));
  for (const auto& [name, t] : w.entries) {
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<uint32_t>(t.shape.size()));
    for (const int64_t d : t.shape)
      f.write(reinterpret_cast<const char*>(&d), 8);
    f.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * 4));
  }
  require(f.good(), errc::io, "short write to " + path);
}

ModelWeights load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), errc::io, "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, errc::format,
          path + ": not a volsynth checkpoint");
  const uint32_t version = get_u32(f, path);
  require(version == kVersion, errc::unsupported,
          path + ": unsupported checkpoint version " + std::to_string(version));

  ModelWeights w;
  const uint32_t tag_len = get_u32(f, path);
  require(tag_len <= 256, errc::corrupt, path + ": implausible tag length");
  w.arch_tag.resize(tag_len);
  f.read(w.arch_tag.data(), tag_len);
  require(f.gcount() == static_cast<std::streamsize>(tag_len), errc::corrupt,
          path + ": truncated checkpoint");

  const uint32_t count = get_u32(f, path);
  require(count <= 100000, errc::corrupt, path + ": implausible record count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(f, path);
    require(name_len >= 1 && name_len <= 4096, errc::corrupt,
            path + ": implausible name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    require(f.gcount() == static_cast<std::streamsize>(name_len), errc::corrupt,
            path + ": truncated checkpoint");
    const uint32_t rank = get_u32(f, path);
    require(rank >= 1 && rank <= 8, errc::corrupt, path + ": implausible rank");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      f.read(reinterpret_cast<char*>(&shape[d]), 8);
      require(f.gcount() == 8, errc::corrupt, path + ": truncated checkpoint");
      require(shape[d] >= 1 && shape[d] <= (int64_t{1} << 32), errc::corrupt,
              path + ": implausible dim");
      numel *= shape[d];
    }
    Tensor32 t;
    t.shape = std::move(shape);
    t.v.resize(static_cast<size_t>(numel));
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * 4));
    require(f.gcount() == static_cast<std::streamsize>(t.v.size() * 4),
            errc::corrupt, path + ": truncated checkpoint");
    w.entries.emplace_back(std::move(name), std::move(t));
  }
  return w;
}

void check_arch_tag(const ModelWeights& w, const std::string& expected) {
  require(w.arch_tag == expected, errc::incompatible,
          "checkpoint architecture '" + w.arch_tag + "' does not match '" +
              expected + "'");
}

}  // namespace volsynth
