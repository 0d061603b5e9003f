#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lvr/data/dataset.hpp"
#include "lvr/decode/generate.hpp"
#include "lvr/grpo/config.hpp"
#include "lvr/log.hpp"
#include "lvr/parallel.hpp"

namespace lvr {

struct RewardBreakdown {
  double format = 0;
  double accuracy = 0;
  double total = 0;
};

/// One sampled response. The trace keeps every fed-back latent vector at its
/// response index, so position bookkeeping is shared with the decoder.
/// token_indices lists the response indices of sampled text tokens, the only
/// positions any loss term touches.
template <std::floating_point T>
struct RolloutRecord {
  DecodeTrace<T> trace;
  std::uint64_t seed = 0;
  std::vector<std::size_t> token_indices;
  std::vector<double> old_logprobs;
  std::vector<double> ref_logprobs;  // filled by the update step
  RewardBreakdown reward;

  std::size_t length() const noexcept { return token_indices.size(); }
  bool triggered() const noexcept { return !trace.segments.empty(); }
  bool finished() const noexcept { return trace.stop_reason == "eos"; }
};

template <std::floating_point T>
RolloutRecord<T> make_record(DecodeTrace<T> trace, std::uint64_t seed) {
  RolloutRecord<T> r;
  r.seed = seed;
  for (std::size_t i = 0; i < trace.response.size(); ++i) {
    if (trace.response[i].kind == ElementKind::kText && trace.sampled[i]) {
      r.token_indices.push_back(i);
      r.old_logprobs.push_back(trace.logprobs[i]);
    }
  }
  r.trace = std::move(trace);
  return r;
}

template <std::floating_point T>
struct Group {
  std::string instance_id;
  MixedSequence<T> prompt;
  std::vector<int> gold;
  std::vector<RolloutRecord<T>> records;
  std::vector<double> advantages;  // one per record, shared by all its tokens
};

/// format: <|lvr_start|> followed later by <|lvr_end|>. accuracy: exact match
/// of the answer span against gold.
inline RewardBreakdown compute_reward(const std::vector<int>& tokens, const std::vector<int>& gold,
                                      double format_weight, double accuracy_weight) {
  RewardBreakdown r;
  r.format = has_latent_format(tokens) ? 1.0 : 0.0;
  r.accuracy = extract_answer(tokens) == gold ? 1.0 : 0.0;
  r.total = format_weight * r.format + accuracy_weight * r.accuracy;
  return r;
}

template <std::floating_point T>
std::vector<double> compute_rewards(Group<T>& g, double format_weight, double accuracy_weight) {
  std::vector<double> out;
  for (auto& r : g.records) {
    r.reward = compute_reward(r.trace.tokens(), g.gold, format_weight, accuracy_weight);
    out.push_back(r.reward.total);
  }
  return out;
}

inline constexpr double kDegenerateStd = 1e-8;

/// (R - mean) / std with the population std; a group whose std is below
/// 1e-8 gets all-zero advantages.
inline std::vector<double> normalize_advantages(std::span<const double> rewards) {
  require(rewards.size() >= 2, ErrorKind::kContract, "normalize_advantages: need G >= 2");
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (std < kDegenerateStd) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std;
  return out;
}

/// Seed of rollout i in a group seeded with `seed`.
inline std::uint64_t rollout_seed(std::uint64_t seed, std::size_t i) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i) + 0x243f6a88ull));
}

/// G independent samples from the frozen snapshot `policy_old`. Rewards and
/// advantages are left for the caller.
template <std::floating_point T>
Group<T> rollout_group(const ModelWeights<T>& policy_old, const MixedSequence<T>& prompt,
                       const std::vector<int>& gold, const RLConfig& cfg, std::uint64_t seed,
                       std::size_t threads = 1, int fixed_steps_override = 0) {
  const auto dc = cfg.rollout_decode();
  Group<T> g;
  g.prompt = prompt;
  g.gold = gold;
  g.records.resize(static_cast<std::size_t>(cfg.group_size));
  parallel_for(g.records.size(), threads, [&](std::size_t i) {
    const auto s = rollout_seed(seed, i);
    g.records[i] =
        make_record(generate(policy_old, prompt, dc, s, DecodeBackend::kCached, fixed_steps_override), s);
  });
  bool any_finished = false;
  for (const auto& r : g.records) any_finished = any_finished || r.finished();
  if (!any_finished) warn("rollout group: no response reached EOS; group kept");
  return g;
}

/// Debug dump of one group: token ids and strings, latent positions, rewards.
template <std::floating_point T>
Json group_to_json(const Group<T>& g, const Vocab& vocab, bool include_latents = false) {
  Json j;
  j["instance_id"] = g.instance_id;
  j["prompt_length"] = g.prompt.size();
  j["gold"] = vocab.decode(g.gold);
  Json rs = Json::array();
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    const auto& r = g.records[i];
    Json rj = trace_to_json(r.trace, vocab, include_latents);
    std::vector<std::size_t> latent_positions;
    for (std::size_t k = 0; k < r.trace.response.size(); ++k) {
      if (r.trace.response[k].kind == ElementKind::kLatent) {
        latent_positions.push_back(r.trace.position(k));
      }
    }
    rj["seed"] = r.seed;
    rj["latent_positions"] = latent_positions;
    rj["reward"] = {{"format", r.reward.format},
                    {"accuracy", r.reward.accuracy},
                    {"total", r.reward.total}};
    if (i < g.advantages.size()) rj["advantage"] = g.advantages[i];
    rs.push_back(rj);
  }
  j["rollouts"] = rs;
  return j;
}

}  // namespace lvr
