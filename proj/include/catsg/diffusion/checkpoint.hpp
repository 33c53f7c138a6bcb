#pragma once

// Model checkpoints: one self-describing binary archive per save.
//
//   magic "CATSGCK1"
//   u32 entry count
//   per entry: u32 name length, name bytes, u64 payload length, payload
//
// The first entry is always manifest.json (architecture, dataset metadata,
// parameter shapes in registration order, training progress); the rest are
// named little-endian float32 parameter blobs, one per ParamStore entry, in
// registration order. Everything needed to rebuild the model and sample from
// it travels inside the archive. Writes go to a temp file first and are
// renamed into place.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/diffusion/model.hpp"

namespace catsg {

namespace detail {

inline constexpr char kCkptMagic[8] = {'C', 'A', 'T', 'S', 'G', 'C', 'K', '1'};

inline void append_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void append_u64(std::string& buf, std::uint64_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

struct ArchiveReader {
  std::string bytes;
  size_t pos = 0;

  explicit ArchiveReader(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    CATSG_CHECK(is.good(), IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    bytes = std::move(ss).str();
    CATSG_CHECK(bytes.size() >= sizeof(kCkptMagic) + 4 &&
                    std::memcmp(bytes.data(), kCkptMagic,
                                sizeof(kCkptMagic)) == 0,
                IoError, path.string() + " is not a checkpoint archive");
    pos = sizeof(kCkptMagic);
  }

  template <class T>
  T take() {
    CATSG_CHECK(pos + sizeof(T) <= bytes.size(), IoError,
                "checkpoint archive truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }

  std::string take_bytes(size_t n) {
    CATSG_CHECK(pos + n <= bytes.size(), IoError,
                "checkpoint archive truncated");
    std::string out = bytes.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace detail

struct CheckpointInfo {
  ArchConfig arch;
  BundleMeta meta;
  int trained_steps = 0;
  json manifest;
};

template <class S>
void save_checkpoint(const std::filesystem::path& path,
                     const CatsgModel<S>& model, int trained_steps,
                     const json& extra = json::object()) {
  json shapes = json::array();
  for (const auto& [name, var] : model.params.entries())
    shapes.push_back(json{{"name", name}, {"shape", var->val.shape}});
  json manifest{{"schema_version", 1},
                {"format", "catsg-checkpoint-1"},
                {"arch", model.arch.to_json()},
                {"bundle_meta", model.meta.to_json()},
                {"trained_steps", trained_steps},
                {"params", std::move(shapes)},
                {"extra", extra}};
  std::string mjson = manifest.dump(2);

  std::string buf;
  buf.append(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::append_u32(buf, static_cast<std::uint32_t>(
                              model.params.entries().size() + 1));
  auto put_entry = [&buf](const std::string& name, const char* payload,
                          size_t n) {
    detail::append_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    detail::append_u64(buf, static_cast<std::uint64_t>(n));
    buf.append(payload, n);
  };
  put_entry("manifest.json", mjson.data(), mjson.size());
  std::vector<float> f32;
  for (const auto& [name, var] : model.params.entries()) {
    f32.assign(var->val.v.begin(), var->val.v.end());
    put_entry(name, reinterpret_cast<const char*>(f32.data()),
              f32.size() * sizeof(float));
  }
  detail::write_file_atomic(path, buf);
}

// Rebuild the model described by the archive and overwrite every parameter
// with the stored blob. Returns the manifest alongside.
template <class S>
std::unique_ptr<CatsgModel<S>> load_checkpoint(
    const std::filesystem::path& path, CheckpointInfo* info_out = nullptr) {
  detail::ArchiveReader rd(path);
  const std::uint32_t n_entries = rd.take<std::uint32_t>();
  CATSG_CHECK(n_entries >= 1, IoError, "checkpoint archive has no entries");

  std::map<std::string, std::string> blobs;
  std::string manifest_text;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    auto name_len = rd.take<std::uint32_t>();
    std::string name = rd.take_bytes(name_len);
    auto payload_len = rd.take<std::uint64_t>();
    std::string payload = rd.take_bytes(static_cast<size_t>(payload_len));
    if (i == 0) {
      CATSG_CHECK(name == "manifest.json", IoError,
                  "checkpoint manifest must be the first entry");
      manifest_text = std::move(payload);
    } else {
      blobs.emplace(std::move(name), std::move(payload));
    }
  }

  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint manifest is not valid JSON: ") +
                  e.what());
  }
  CATSG_CHECK(manifest.at("schema_version").get<int>() == 1, IoError,
              "unsupported checkpoint schema version");

  CheckpointInfo info;
  info.arch = ArchConfig::from_json(manifest.at("arch"));
  info.meta = BundleMeta::from_json(manifest.at("bundle_meta"));
  info.trained_steps = manifest.at("trained_steps").get<int>();
  info.manifest = manifest;

  Rng scratch(0);  // initial draws are overwritten below
  auto model = std::make_unique<CatsgModel<S>>(info.arch, info.meta, scratch);
  CATSG_CHECK(model->params.entries().size() + 1 == n_entries, IoError,
              "checkpoint parameter count does not match the architecture");
  for (const auto& [name, var] : model->params.entries()) {
    auto it = blobs.find(name);
    CATSG_CHECK(it != blobs.end(), IoError,
                "checkpoint is missing parameter '" + name + "'");
    CATSG_CHECK(it->second.size() == var->val.numel() * sizeof(float), IoError,
                "checkpoint blob size mismatch for '" + name + "'");
    const float* src = reinterpret_cast<const float*>(it->second.data());
    for (size_t i = 0; i < var->val.numel(); ++i)
      var->val.data()[i] = static_cast<S>(src[i]);
  }
  if (info_out) *info_out = std::move(info);
  return model;
}

}  // namespace catsg
