#pragma once

#include <cstdint>
#include <string>

#include "lvr/error.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

enum class StopStrategy { kFixedToken, kLatentEnd, kModeSwitch };
enum class DistanceMetric { kCosine, kL1, kL2 };

inline std::string to_string(StopStrategy s) {
  switch (s) {
    case StopStrategy::kFixedToken: return "fixed_token";
    case StopStrategy::kLatentEnd: return "latent_end";
    case StopStrategy::kModeSwitch: return "mode_switch";
  }
  return "fixed_token";
}

inline StopStrategy parse_stop_strategy(const std::string& s) {
  if (s == "fixed_token") return StopStrategy::kFixedToken;
  if (s == "latent_end") return StopStrategy::kLatentEnd;
  if (s == "mode_switch") return StopStrategy::kModeSwitch;
  fail(ErrorKind::kConfig, "unknown strategy '" + s + "'");
}

inline std::string to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::kCosine: return "cosine";
    case DistanceMetric::kL1: return "l1";
    case DistanceMetric::kL2: return "l2";
  }
  return "cosine";
}

inline DistanceMetric parse_distance_metric(const std::string& s) {
  if (s == "cosine") return DistanceMetric::kCosine;
  if (s == "l1") return DistanceMetric::kL1;
  if (s == "l2") return DistanceMetric::kL2;
  fail(ErrorKind::kConfig, "unknown latent_end_metric '" + s + "'");
}

struct DecodeConfig {
  StopStrategy strategy = StopStrategy::kFixedToken;
  int fixed_steps = 4;
  // batch_eval only: use the instance's ROI patch count as the fixed budget.
  bool fixed_steps_from_roi = false;
  DistanceMetric latent_end_metric = DistanceMetric::kCosine;
  double latent_end_threshold = 0.9;
  int max_latent_steps = 64;
  int max_new_tokens = 16;
  double temperature = 1.0;
  bool greedy = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(fixed_steps >= 1, ErrorKind::kConfig, "decode.fixed_steps must be at least 1");
    require(max_latent_steps >= 1, ErrorKind::kConfig, "decode.max_latent_steps must be >= 1");
    require(strategy != StopStrategy::kFixedToken || max_latent_steps >= fixed_steps,
            ErrorKind::kConfig, "decode.max_latent_steps must be >= decode.fixed_steps");
    require(max_new_tokens >= 1, ErrorKind::kConfig, "decode.max_new_tokens must be >= 1");
    require(temperature > 0, ErrorKind::kConfig, "decode.temperature must be positive");
  }
};

inline Json to_json(const DecodeConfig& c) {
  Json j;
  j["strategy"] = to_string(c.strategy);
  j["fixed_steps"] = c.fixed_steps;
  j["fixed_steps_from_roi"] = c.fixed_steps_from_roi;
  j["latent_end_metric"] = to_string(c.latent_end_metric);
  j["latent_end_threshold"] = c.latent_end_threshold;
  j["max_latent_steps"] = c.max_latent_steps;
  j["max_new_tokens"] = c.max_new_tokens;
  j["temperature"] = c.temperature;
  j["greedy"] = c.greedy;
  j["seed"] = c.seed;
  return j;
}

inline DecodeConfig decode_config_from_json(const Json& j, DecodeConfig c = {},
                                            const std::string& section = "decode") {
  JsonFields f(j, section);
  f.read_enum("strategy", c.strategy, parse_stop_strategy);
  f.read("fixed_steps", c.fixed_steps);
  f.read("fixed_steps_from_roi", c.fixed_steps_from_roi);
  f.read_enum("latent_end_metric", c.latent_end_metric, parse_distance_metric);
  f.read("latent_end_threshold", c.latent_end_threshold);
  f.read("max_latent_steps", c.max_latent_steps);
  f.read("max_new_tokens", c.max_new_tokens);
  f.read("temperature", c.temperature);
  f.read("greedy", c.greedy);
  f.read("seed", c.seed);
  f.finish();
  c.validate();
  return c;
}

}  // namespace lvr
