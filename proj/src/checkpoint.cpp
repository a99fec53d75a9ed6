#include "kerg/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace kerg {

namespace {

constexpr char kMagic[8] = {'K', 'E', 'R', 'G', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::string& config_hash, uint64_t seed) {
  nlohmann::json manifest;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = seed;
  manifest["params"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : params) {
    nlohmann::json e;
    e["name"] = p.name;
    e["shape"] = p.tensor->shape;
    e["offset"] = offset;
    manifest["params"].push_back(std::move(e));
    offset += static_cast<uint64_t>(p.tensor->size()) * sizeof(double);
  }
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params)
    os.write(reinterpret_cast<const char*>(p.tensor->data.data()),
             static_cast<std::streamsize>(p.tensor->data.size() * sizeof(double)));
  if (!os) throw ContractError("checkpoint: write failed for " + path);
}

namespace {

CheckpointInfo read_manifest(std::ifstream& is, const std::string& path) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ContractError("checkpoint: " + path + " is not a KERGCKP1 file");
  const uint64_t len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ContractError("checkpoint: truncated manifest in " + path);

  nlohmann::json manifest = nlohmann::json::parse(text);
  CheckpointInfo info;
  info.config_hash = manifest.at("config_hash").get<std::string>();
  info.seed = manifest.at("seed").get<uint64_t>();
  for (const auto& e : manifest.at("params")) {
    CheckpointEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<Shape>();
    info.entries.push_back(std::move(entry));
  }
  return info;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("checkpoint: cannot open " + path);
  return read_manifest(is, path);
}

CheckpointInfo load_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("checkpoint: cannot open " + path);
  CheckpointInfo info = read_manifest(is, path);

  std::map<std::string, size_t> by_name;
  for (size_t i = 0; i < info.entries.size(); ++i) by_name[info.entries[i].name] = i;
  if (info.entries.size() != params.size())
    throw ContractError("checkpoint: " + path + " holds " + std::to_string(info.entries.size()) +
                        " tensors, model expects " + std::to_string(params.size()));
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ContractError("checkpoint: missing tensor '" + p.name + "'");
    const auto& entry = info.entries[it->second];
    if (entry.shape != p.tensor->shape)
      throw ContractError("checkpoint: shape mismatch for '" + p.name + "': file " +
                          shape_str(entry.shape) + ", model " + shape_str(p.tensor->shape));
  }

  // Payload order follows the manifest, so read sequentially by entry index.
  std::map<size_t, TensorPtr> by_index;
  for (const auto& p : params) by_index[by_name.at(p.name)] = p.tensor;
  for (auto& [idx, tensor] : by_index) {
    is.read(reinterpret_cast<char*>(tensor->data.data()),
            static_cast<std::streamsize>(tensor->data.size() * sizeof(double)));
    if (!is) throw ContractError("checkpoint: truncated payload in " + path);
  }
  return info;
}

}  // namespace kerg
