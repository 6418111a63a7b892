// SPDX-License-Identifier: Apache-2.0
#include "affnet/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "affnet/serde.hpp"

namespace affnet {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'F', 'F', 'N'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

template <typename V>
void write_raw(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::ifstream& in, const std::filesystem::path& path) {
  V v;
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.named) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  const json header{{"format_version", kVersion},
                    {"config", json::parse(to_json_string(params.config))},
                    {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint64_t>(header_text.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : params.named) {
    buf.resize(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not an AFFN checkpoint: " + path.string());
  const auto version = read_raw<std::uint32_t>(in, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version in " + path.string());
  const auto header_len = read_raw<std::uint64_t>(in, path);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated checkpoint header " + path.string());

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  const ModelConfig config = model_config_from_json(header.at("config").dump());

  // Rebuild the parameter structure, then overwrite every tensor from the
  // blob in header order.
  ModelParams<T> params = build<T>(config, /*seed=*/0);
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.named.size()) {
    throw IoError("checkpoint tensor count does not match the rebuilt model: " + path.string());
  }
  std::vector<float> buf;
  for (std::size_t i = 0; i < params.named.size(); ++i) {
    const json& meta = tensors[i];
    auto& [name, tensor] = params.named[i];
    if (meta.at("name").get<std::string>() != name) {
      throw IoError("checkpoint tensor order mismatch at '" + name + "' in " + path.string());
    }
    if (meta.at("shape").get<std::vector<int>>() != tensor.shape()) {
      throw IoError("checkpoint shape mismatch for '" + name + "' in " + path.string());
    }
    buf.resize(static_cast<std::size_t>(tensor.numel()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint blob at '" + name + "' in " + path.string());
    for (std::int64_t k = 0; k < tensor.numel(); ++k) tensor.data()[k] = static_cast<T>(buf[static_cast<std::size_t>(k)]);
  }
  return params;
}

template void save_checkpoint<float>(const ModelParams<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const ModelParams<double>&, const std::filesystem::path&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace affnet
