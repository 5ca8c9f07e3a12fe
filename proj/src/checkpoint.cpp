#include "bams/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace bams {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float64");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json dims_to_json(const ModelDims& d) {
  return json{{"hidden", d.hidden},
              {"key_dim", d.key_dim},
              {"value_dim", d.value_dim},
              {"map_channels", d.map_channels},
              {"grid", d.grid},
              {"actions", d.actions},
              {"attn_divisor_dim", d.attn_divisor_dim}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.hidden = j.at("hidden").get<int>();
  d.key_dim = j.at("key_dim").get<int>();
  d.value_dim = j.at("value_dim").get<int>();
  d.map_channels = j.at("map_channels").get<int>();
  d.grid = j.at("grid").get<int>();
  d.actions = j.at("actions").get<int>();
  d.attn_divisor_dim = j.at("attn_divisor_dim").get<int>();
  return d;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Params& params, uint64_t seed, int step) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("checkpoint: cannot create " + dir + ": " + ec.message());

  json manifest;
  manifest["dims"] = dims_to_json(params.dims);
  manifest["seed"] = seed;
  manifest["step"] = step;
  json index = json::array();
  for (const auto& [name, t] : params.named()) {
    const std::string file = name + ".bin";
    index.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
    std::ofstream blob(fs::path(dir) / file, std::ios::binary | std::ios::trunc);
    if (!blob) throw IoError("checkpoint: cannot write " + file);
    blob.write(reinterpret_cast<const char*>(t.values().data()),
               static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    if (!blob) throw IoError("checkpoint: short write on " + file);
  }
  manifest["tensors"] = index;
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("checkpoint: cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("checkpoint: cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw IoError("checkpoint: bad manifest in " + dir + ": " + e.what());
  }

  LoadedCheckpoint out;
  ModelDims dims;
  try {
    dims = dims_from_json(manifest.at("dims"));
    out.seed = manifest.at("seed").get<uint64_t>();
    out.step = manifest.at("step").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint manifest: ") + e.what());
  }
  // Expected shapes come from rebuilding the parameter set for these dims.
  out.params = init_params(dims, 0);

  auto named = out.params.named();
  const json& index = manifest.at("tensors");
  if (index.size() != named.size()) {
    throw ConfigError("checkpoint: manifest lists " + std::to_string(index.size()) +
                      " tensors, model has " + std::to_string(named.size()));
  }
  for (const json& entry : index) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    auto it = std::find_if(named.begin(), named.end(),
                           [&](const auto& kv) { return kv.first == name; });
    if (it == named.end()) throw ConfigError("checkpoint: unknown tensor '" + name + "'");
    Tensor& t = it->second;
    if (t.shape() != shape) {
      throw ConfigError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                        ", model dims want " + shape_str(t.shape()));
    }
    std::ifstream blob(fs::path(dir) / entry.at("file").get<std::string>(), std::ios::binary);
    if (!blob) throw IoError("checkpoint: cannot open blob for '" + name + "'");
    blob.read(reinterpret_cast<char*>(t.values().data()),
              static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    if (blob.gcount() != static_cast<std::streamsize>(t.values().size() * sizeof(double))) {
      throw IoError("checkpoint: blob for '" + name + "' is truncated");
    }
  }
  return out;
}

}  // namespace bams
