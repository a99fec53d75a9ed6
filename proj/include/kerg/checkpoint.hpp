#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kerg/tensor.hpp"

namespace kerg {

// One tensor slot in a checkpoint, addressed by name.
struct NamedParam {
  std::string name;
  TensorPtr tensor;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
};

struct CheckpointInfo {
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<CheckpointEntry> entries;
};

// Binary checkpoint: magic "KERGCKP1", a u64 little-endian manifest length,
// a JSON manifest (config hash, seed, per-tensor name/shape/offset), then the
// tensor payloads as little-endian float64 in manifest order.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::string& config_hash, uint64_t seed);

// Reads only the manifest.
CheckpointInfo peek_checkpoint(const std::string& path);

// Loads values into the given tensors. Strict: the checkpoint must contain
// every requested name with an identical shape, otherwise ContractError with
// the offending name. Extra tensors in the file are also an error, so a
// checkpoint from a differently-shaped model never loads silently.
CheckpointInfo load_checkpoint(const std::string& path, const std::vector<NamedParam>& params);

}  // namespace kerg
