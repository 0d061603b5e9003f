#pragma once

#include <map>
#include <span>
#include <vector>

#include "lvr/data/assemble.hpp"
#include "lvr/data/dataset.hpp"
#include "lvr/decode/generate.hpp"
#include "lvr/parallel.hpp"

namespace lvr {

/// An instance with its visual tokens already encoded.
template <std::floating_point T>
struct EncodedExample {
  SFTInstance instance;
  Tensor<T> visual_tokens;
};

template <std::floating_point T>
std::vector<EncodedExample<T>> encode_examples(const ModelWeights<T>& w,
                                               std::span<const GeneratedInstance> generated) {
  std::vector<EncodedExample<T>> out;
  out.reserve(generated.size());
  for (const auto& g : generated) out.push_back({g.instance, w.vision.encode(g.image)});
  return out;
}

/// FixedToken budget taken from the instance's ROI size when configured,
/// otherwise 0 (use the configured fixed_steps).
inline int roi_fixed_steps(const DecodeConfig& cfg, const SFTInstance& inst, int patch_size) {
  if (!cfg.fixed_steps_from_roi) return 0;
  return static_cast<int>(
      bbox_to_patch_indices(inst.bbox, inst.height, inst.width, patch_size).size());
}

struct TaskScore {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct EvalReport {
  TaskScore overall;
  std::map<std::string, TaskScore> per_task;
  double mean_latent_steps = 0;
  double trigger_rate = 0;
  double format_rate = 0;

  Json to_json() const {
    Json j;
    j["n"] = overall.total;
    j["accuracy"] = overall.accuracy();
    Json t;
    for (const auto& [k, s] : per_task) t[k] = {{"n", s.total}, {"accuracy", s.accuracy()}};
    j["per_task"] = t;
    j["mean_latent_steps"] = mean_latent_steps;
    j["trigger_rate"] = trigger_rate;
    j["format_rate"] = format_rate;
    return j;
  }
};

/// Exact-match answer accuracy per task kind. Instance i is decoded with seed
/// cfg.seed + i, so results do not depend on the thread count.
template <std::floating_point T>
EvalReport batch_eval(const ModelWeights<T>& w, std::span<const EncodedExample<T>> examples,
                      const DecodeConfig& cfg, std::size_t threads = 1) {
  struct Outcome {
    bool correct = false;
    bool triggered = false;
    bool formatted = false;
    std::size_t latent_steps = 0;
  };
  std::vector<Outcome> outcomes(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    const auto prompt = assemble_prompt(ex.instance, ex.visual_tokens);
    const int k = roi_fixed_steps(cfg, ex.instance, w.config.patch_size);
    const auto trace = generate(w, prompt, cfg, cfg.seed + i, DecodeBackend::kCached, k);
    const auto tokens = trace.tokens();
    auto& o = outcomes[i];
    o.correct = extract_answer(tokens) == ex.instance.answer;
    o.triggered = !trace.segments.empty();
    o.formatted = has_latent_format(tokens);
    o.latent_steps = trace.latent_steps();
  });
  EvalReport r;
  std::size_t steps = 0, triggered = 0, formatted = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& o = outcomes[i];
    auto& task = r.per_task[to_string(examples[i].instance.task)];
    ++task.total;
    ++r.overall.total;
    task.correct += o.correct;
    r.overall.correct += o.correct;
    steps += o.latent_steps;
    triggered += o.triggered;
    formatted += o.formatted;
  }
  if (!examples.empty()) {
    const double n = static_cast<double>(examples.size());
    r.mean_latent_steps = static_cast<double>(steps) / n;
    r.trigger_rate = static_cast<double>(triggered) / n;
    r.format_rate = static_cast<double>(formatted) / n;
  }
  return r;
}

}  // namespace lvr
