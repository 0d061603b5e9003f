#pragma once

#include <cstdint>
#include <string>

#include "lvr/error.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

enum class LvrHeadKind { kIdentity, kMlp2, kGlu3x };

inline std::string to_string(LvrHeadKind kind) {
  switch (kind) {
    case LvrHeadKind::kIdentity: return "identity";
    case LvrHeadKind::kMlp2: return "mlp2";
    case LvrHeadKind::kGlu3x: return "glu3x";
  }
  return "identity";
}

inline LvrHeadKind parse_lvr_head_kind(const std::string& s) {
  if (s == "identity") return LvrHeadKind::kIdentity;
  if (s == "mlp2") return LvrHeadKind::kMlp2;
  if (s == "glu3x") return LvrHeadKind::kGlu3x;
  fail(ErrorKind::kConfig, "unknown lvr_head_kind '" + s + "'");
}

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int vocab_size = 64;
  int max_seq_len = 64;
  int patch_size = 28;
  int image_channels = 3;
  LvrHeadKind lvr_head_kind = LvrHeadKind::kIdentity;
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](int v, const char* name) {
      require(v > 0, ErrorKind::kConfig, std::string("model.") + name + " must be positive");
    };
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(patch_size, "patch_size");
    positive(image_channels, "image_channels");
    require(d_model % n_heads == 0, ErrorKind::kConfig,
            "model.d_model must be divisible by model.n_heads");
  }

  std::size_t d() const noexcept { return static_cast<std::size_t>(d_model); }
  std::size_t patch_dim() const noexcept {
    return static_cast<std::size_t>(patch_size * patch_size * image_channels);
  }
};

inline Json to_json(const ModelConfig& c) {
  Json j;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["patch_size"] = c.patch_size;
  j["image_channels"] = c.image_channels;
  j["lvr_head_kind"] = to_string(c.lvr_head_kind);
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}) {
  JsonFields f(j, "model");
  f.read("d_model", c.d_model);
  f.read("n_layers", c.n_layers);
  f.read("n_heads", c.n_heads);
  f.read("vocab_size", c.vocab_size);
  f.read("max_seq_len", c.max_seq_len);
  f.read("patch_size", c.patch_size);
  f.read("image_channels", c.image_channels);
  f.read_enum("lvr_head_kind", c.lvr_head_kind, parse_lvr_head_kind);
  f.read("seed", c.seed);
  f.finish();
  c.validate();
  return c;
}

}  // namespace lvr
