#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lvr/data/config.hpp"
#include "lvr/data/dataset.hpp"
#include "lvr/error.hpp"
#include "lvr/model/vision.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline constexpr char kImageMagic[4] = {'L', 'V', 'R', 'I'};
inline constexpr const char* kManifestMagic = "LVRM";
inline constexpr int kManifestVersion = 1;

// "LVRI", int32 C, H, W, then C*H*W float32.
inline std::string serialize_image(const Image& img) {
  std::string out(16 + img.pixels.size() * sizeof(float), '\0');
  std::memcpy(out.data(), kImageMagic, 4);
  const std::int32_t dims[3] = {img.channels, img.height, img.width};
  std::memcpy(out.data() + 4, dims, sizeof dims);
  std::memcpy(out.data() + 16, img.pixels.data(), img.pixels.size() * sizeof(float));
  return out;
}

inline Image deserialize_image(const std::string& bytes) {
  if (bytes.size() < 16) throw FormatError("image: header truncated", bytes.size());
  if (std::memcmp(bytes.data(), kImageMagic, 4) != 0) {
    throw FormatError("image: missing LVRI magic", 0);
  }
  std::int32_t dims[3];
  std::memcpy(dims, bytes.data() + 4, sizeof dims);
  for (int i = 0; i < 3; ++i) {
    if (dims[i] <= 0) {
      throw FormatError("image: non-positive dimension", 4 + 4 * static_cast<std::size_t>(i));
    }
  }
  Image img(dims[0], dims[1], dims[2]);
  const std::size_t need = 16 + img.pixels.size() * sizeof(float);
  if (bytes.size() < need) throw FormatError("image: truncated payload", bytes.size());
  if (bytes.size() > need) throw FormatError("image: trailing bytes", need);
  std::memcpy(img.pixels.data(), bytes.data() + 16, img.pixels.size() * sizeof(float));
  return img;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kFormat, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kFormat, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  write_bytes(path, serialize_image(img));
}

inline Image read_image(const std::filesystem::path& path) {
  try {
    return deserialize_image(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

inline Json to_json(const SFTInstance& inst) {
  Json j;
  j["id"] = inst.id;
  j["image"] = inst.image_path;
  j["shape"] = {inst.channels, inst.height, inst.width};
  j["task"] = to_string(inst.task);
  j["question"] = inst.question;
  j["bbox"] = {inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1};
  j["answer"] = inst.answer;
  j["split"] = to_string(inst.split);
  j["scene_seed"] = inst.scene_seed;
  return j;
}

inline SFTInstance instance_from_json(const Json& j) {
  SFTInstance inst;
  JsonFields f(j, "manifest record");
  f.read("id", inst.id);
  f.read("image", inst.image_path);
  std::vector<int> shape, bbox;
  f.read("shape", shape);
  f.read_enum("task", inst.task, parse_task_kind);
  f.read("question", inst.question);
  f.read("bbox", bbox);
  f.read("answer", inst.answer);
  f.read_enum("split", inst.split, parse_split);
  f.read("scene_seed", inst.scene_seed);
  f.finish();
  require(shape.size() == 3, ErrorKind::kFormat, "shape must have 3 entries");
  require(bbox.size() == 4, ErrorKind::kFormat, "bbox must have 4 entries");
  inst.channels = shape[0];
  inst.height = shape[1];
  inst.width = shape[2];
  inst.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
  require(!inst.id.empty() && !inst.image_path.empty(), ErrorKind::kFormat,
          "record needs id and image");
  require(inst.bbox.valid_for(inst.height, inst.width), ErrorKind::kFormat,
          "bbox invalid for image shape");
  return inst;
}

struct Manifest {
  DataConfig config;
  std::vector<SFTInstance> instances;
};

/// First line is a header {"magic", "version", "config"}; each further line
/// is one instance record.
inline std::string serialize_manifest(const Manifest& m) {
  Json header;
  header["magic"] = kManifestMagic;
  header["version"] = kManifestVersion;
  header["config"] = to_json(m.config);
  std::string out = header.dump() + "\n";
  for (const auto& inst : m.instances) out += to_json(inst).dump() + "\n";
  return out;
}

inline Manifest deserialize_manifest(const std::string& text) {
  Manifest m;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) {
      throw FormatError("manifest: last line not newline-terminated", pos);
    }
    const std::string_view line(text.data() + pos, end - pos);
    try {
      const Json j = Json::parse(line);
      if (!have_header) {
        JsonFields f(j, "manifest header");
        std::string magic;
        int version = 0;
        f.read("magic", magic);
        f.read("version", version);
        const Json* cfg = f.child("config");
        f.finish();
        require(magic == kManifestMagic, ErrorKind::kFormat, "missing LVRM magic");
        require(version == kManifestVersion, ErrorKind::kFormat,
                "unsupported manifest version " + std::to_string(version));
        require(cfg != nullptr, ErrorKind::kFormat, "header lacks config");
        m.config = data_config_from_json(*cfg);
        have_header = true;
      } else {
        m.instances.push_back(instance_from_json(j));
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(std::string("manifest: ") + e.what(), pos);
    }
    pos = end + 1;
  }
  if (!have_header) throw FormatError("manifest: empty file", 0);
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  write_bytes(path, serialize_manifest(m));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  try {
    return deserialize_manifest(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Streams generated instances into dir/manifest.jsonl and dir/images/.
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path dir, const DataConfig& config) : dir_(std::move(dir)) {
    manifest_.config = config;
    std::filesystem::create_directories(dir_ / "images");
  }

  void add(const SFTInstance& inst, const Image& image) {
    write_image(dir_ / inst.image_path, image);
    manifest_.instances.push_back(inst);
  }

  void finish() { write_manifest(dir_ / "manifest.jsonl", manifest_); }

  const Manifest& manifest() const noexcept { return manifest_; }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
};

}  // namespace lvr
