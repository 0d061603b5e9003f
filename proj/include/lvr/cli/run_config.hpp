#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lvr/data/config.hpp"
#include "lvr/decode/config.hpp"
#include "lvr/grpo/config.hpp"
#include "lvr/model/config.hpp"
#include "lvr/sft/train.hpp"

namespace lvr {

struct IoConfig {
  std::uint64_t seed = 0;  // data generation seed
  std::size_t n = 1000;    // instances written by gen-data
  std::string split = "heldout";  // split used by eval and decode
  std::size_t eval_instances = 512;

  void validate() const {
    require(split == "train" || split == "heldout", ErrorKind::kConfig,
            "io.split must be 'train' or 'heldout'");
  }
};

inline Json to_json(const IoConfig& c) {
  return Json{{"seed", c.seed}, {"n", c.n}, {"split", c.split}, {"eval_instances", c.eval_instances}};
}

inline IoConfig io_config_from_json(const Json& j, IoConfig c = {}) {
  JsonFields f(j, "io");
  f.read("seed", c.seed);
  f.read("n", c.n);
  f.read("split", c.split);
  f.read("eval_instances", c.eval_instances);
  f.finish();
  c.validate();
  return c;
}

/// Every knob of every command, one section per module.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  SFTConfig sft;
  RLConfig rl;
  DecodeConfig decode;
  IoConfig io;

  void validate() const {
    model.validate();
    data.validate();
    sft.validate();
    rl.validate();
    decode.validate();
    io.validate();
    require(model.patch_size == data.patch_size, ErrorKind::kConfig,
            "model.patch_size and data.patch_size differ");
    require(model.image_channels == data.image_channels, ErrorKind::kConfig,
            "model.image_channels and data.image_channels differ");
  }
};

inline Json to_json(const RunConfig& c) {
  Json j;
  j["model"] = to_json(c.model);
  j["data"] = to_json(c.data);
  j["sft"] = to_json(c.sft);
  j["rl"] = to_json(c.rl);
  j["decode"] = to_json(c.decode);
  j["io"] = to_json(c.io);
  return j;
}

/// Missing sections and fields keep their defaults; unknown ones are errors.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  JsonFields f(j, "config");
  if (const Json* s = f.child("model")) c.model = model_config_from_json(*s, c.model);
  if (const Json* s = f.child("data")) c.data = data_config_from_json(*s, c.data);
  if (const Json* s = f.child("sft")) c.sft = sft_config_from_json(*s, c.sft);
  if (const Json* s = f.child("rl")) c.rl = rl_config_from_json(*s, c.rl);
  if (const Json* s = f.child("decode")) c.decode = decode_config_from_json(*s, c.decode);
  if (const Json* s = f.child("io")) c.io = io_config_from_json(*s, c.io);
  f.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kConfig, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, "config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& c) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "resolved_config.json") << to_json(c).dump(2) << '\n';
}

}  // namespace lvr
