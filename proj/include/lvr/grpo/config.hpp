#pragma once

#include <cstdint>

#include "lvr/decode/config.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

struct RLConfig {
  int group_size = 8;
  double temperature = 0.9;  // rollout sampling temperature, also used for replay
  double beta = 0.04;        // KL coefficient
  double clip_eps = 0.2;
  double learning_rate = 1e-5;
  double weight_decay = 0.0;
  double format_weight = 1.0;
  double accuracy_weight = 1.0;
  int steps = 200;             // RL iterations
  int prompts_per_step = 4;    // groups collected per iteration
  int updates_per_step = 1;    // gradient steps on each batch of groups
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0: evaluate before the first and after the last iteration only
  int eval_instances = 256;
  int checkpoint_every = 0;
  int dump_rollouts_every = 0;
  // Rollout decoding. The temperature above overrides decode.temperature.
  DecodeConfig decode = [] {
    DecodeConfig d;
    d.greedy = false;
    return d;
  }();

  DecodeConfig rollout_decode() const {
    DecodeConfig d = decode;
    d.temperature = temperature;
    return d;
  }

  void validate() const {
    require(group_size >= 2, ErrorKind::kConfig, "rl.group_size must be >= 2");
    require(temperature > 0, ErrorKind::kConfig, "rl.temperature must be positive");
    require(clip_eps > 0 && clip_eps < 1, ErrorKind::kConfig, "rl.clip_eps must lie in (0, 1)");
    require(beta >= 0, ErrorKind::kConfig, "rl.beta must be non-negative");
    require(learning_rate > 0, ErrorKind::kConfig, "rl.learning_rate must be positive");
    require(weight_decay >= 0, ErrorKind::kConfig, "rl.weight_decay must be non-negative");
    require(steps >= 0, ErrorKind::kConfig, "rl.steps must be >= 0");
    require(prompts_per_step >= 1 && updates_per_step >= 1, ErrorKind::kConfig,
            "rl.prompts_per_step and rl.updates_per_step must be >= 1");
    require(eval_every >= 0 && eval_instances >= 0 && checkpoint_every >= 0 &&
                dump_rollouts_every >= 0,
            ErrorKind::kConfig, "rl intervals must be non-negative");
    rollout_decode().validate();
  }
};

inline Json to_json(const RLConfig& c) {
  Json j;
  j["group_size"] = c.group_size;
  j["temperature"] = c.temperature;
  j["beta"] = c.beta;
  j["clip_eps"] = c.clip_eps;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["format_weight"] = c.format_weight;
  j["accuracy_weight"] = c.accuracy_weight;
  j["steps"] = c.steps;
  j["prompts_per_step"] = c.prompts_per_step;
  j["updates_per_step"] = c.updates_per_step;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["eval_instances"] = c.eval_instances;
  j["checkpoint_every"] = c.checkpoint_every;
  j["dump_rollouts_every"] = c.dump_rollouts_every;
  j["decode"] = to_json(c.decode);
  return j;
}

inline RLConfig rl_config_from_json(const Json& j, RLConfig c = {}) {
  JsonFields f(j, "rl");
  f.read("group_size", c.group_size);
  f.read("temperature", c.temperature);
  f.read("beta", c.beta);
  f.read("clip_eps", c.clip_eps);
  f.read("learning_rate", c.learning_rate);
  f.read("weight_decay", c.weight_decay);
  f.read("format_weight", c.format_weight);
  f.read("accuracy_weight", c.accuracy_weight);
  f.read("steps", c.steps);
  f.read("prompts_per_step", c.prompts_per_step);
  f.read("updates_per_step", c.updates_per_step);
  f.read("seed", c.seed);
  f.read("eval_every", c.eval_every);
  f.read("eval_instances", c.eval_instances);
  f.read("checkpoint_every", c.checkpoint_every);
  f.read("dump_rollouts_every", c.dump_rollouts_every);
  if (const Json* d = f.child("decode")) c.decode = decode_config_from_json(*d, c.decode, "rl.decode");
  f.finish();
  c.validate();
  return c;
}

}  // namespace lvr
