#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lvr/error.hpp"
#include "lvr/model/vocab.hpp"
#include "lvr/model/weights.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <std::floating_point T>
struct Checkpoint {
  ModelWeights<T> weights;
  Vocab vocab;
};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kFormat, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] inline void checkpoint_error(std::size_t at, const std::string& what) {
  throw FormatError("checkpoint: " + what, at);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'L', 'V', 'R', '1'};

/// Layout: "LVR1", u64 header length, JSON header, then float32 payload with
/// one block per tensor in header order.
template <std::floating_point T>
std::string serialize_checkpoint(const ModelWeights<T>& w, const Vocab& vocab) {
  Json header;
  header["config"] = to_json(w.config);
  header["vision_seed"] = w.vision.seed();
  header["vocab"] = vocab.tokens();
  Json table = Json::array();
  std::uint64_t offset = 0;
  const auto params = w.parameters();
  for (const auto& p : params) {
    Json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["offset"] = offset;
    entry["trainable"] = p.trainable;
    table.push_back(entry);
    offset += p.tensor.numel() * sizeof(float);
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, 4);
  detail::write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    std::vector<float> buf(p.tensor.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.tensor[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  return out.str();
}

template <std::floating_point T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    detail::checkpoint_error(0, "missing LVR1 magic");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, sizeof header_len);
  if (header_len > bytes.size() - 12) detail::checkpoint_error(4, "header length past end of file");
  Json header;
  try {
    header = Json::parse(bytes.begin() + 12,
                         bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    detail::checkpoint_error(12, std::string("malformed header: ") + e.what());
  }
  const std::size_t payload = 12 + header_len;
  ModelConfig config;
  Vocab vocab;
  std::uint64_t vision_seed = 0;
  try {
    config = model_config_from_json(header.at("config"));
    vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
    vision_seed = header.at("vision_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    detail::checkpoint_error(12, std::string("bad header field: ") + e.what());
  } catch (const Error& e) {
    detail::checkpoint_error(12, e.what());
  }
  auto weights = ModelWeights<T>::allocate(config, vision_seed);
  auto params = weights.parameters();
  const auto& table = header.at("tensors");
  if (!table.is_array() || table.size() != params.size()) {
    detail::checkpoint_error(12, "tensor table does not match config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    std::uint64_t offset = 0;
    Shape shape;
    try {
      if (entry.at("name").get<std::string>() != params[i].name) {
        detail::checkpoint_error(12, "unexpected tensor " + entry.at("name").get<std::string>());
      }
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
      if (params[i].name == "latent_end_anchor") {
        weights.set_anchor_trainable(entry.at("trainable").get<bool>());
      }
    } catch (const nlohmann::json::exception& e) {
      detail::checkpoint_error(12, std::string("bad tensor entry: ") + e.what());
    }
    if (shape != params[i].tensor.shape()) detail::checkpoint_error(12, "shape mismatch for " + params[i].name);
    const std::size_t n = params[i].tensor.numel();
    const std::size_t begin = payload + offset;
    if (begin + n * sizeof(float) > bytes.size()) {
      detail::checkpoint_error(bytes.size(), "truncated payload in " + params[i].name);
    }
    Tensor<T> dst = params[i].tensor;
    for (std::size_t j = 0; j < n; ++j) {
      float f;
      std::memcpy(&f, bytes.data() + begin + j * sizeof(float), sizeof f);
      dst[j] = static_cast<T>(f);
    }
  }
  if (vocab.size() > static_cast<std::size_t>(config.vocab_size)) {
    detail::checkpoint_error(12, "vocabulary larger than model vocab_size");
  }
  return Checkpoint<T>{std::move(weights), std::move(vocab)};
}

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& w,
                     const Vocab& vocab) {
  const auto bytes = serialize_checkpoint(w, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kFormat, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <std::floating_point T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(detail::read_file(path));
}

}  // namespace lvr
