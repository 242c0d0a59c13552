// checkpoint.hpp - part of volsynth: flat named-tensor checkpoint container.
//
// File layout (all little-endian):
//   bytes 0..7   magic "VSCKPT\0\0"
//   u32          format version (currently 1)
//   u32          architecture tag length, then that many bytes
//   u32          record count
//   per record:  u32 name length, name bytes,
//                u32 rank, i64 dims[rank],
//                f32 values[prod(dims)] (raw little-endian)
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "optim.hpp"
#include "tensor.hpp"

namespace volsynth {

struct ModelWeights {
  std::string arch_tag;
  std::vector<std::pair<std::string, Tensor32>> entries;

  const Tensor32* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.first == name) return &e.second;
    return nullptr;
  }
};

ModelWeights snapshot_params(const ad::ParamSet<float>& params,
                             const std::string& arch_tag);

// Name/shape-checked restore; frozen parameters are restored too.
void load_params(ad::ParamSet<float>& params, const ModelWeights& w);

void save_checkpoint(const ModelWeights& w, const std::string& path);
ModelWeights load_checkpoint(const std::string& path);

// Errors with errc::incompatible unless the tag matches.
void check_arch_tag(const ModelWeights& w, const std::string& expected);

}  // namespace volsynth
