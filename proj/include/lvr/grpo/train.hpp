#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lvr/decode/eval.hpp"
#include "lvr/grpo/loss.hpp"
#include "lvr/model/checkpoint.hpp"
#include "lvr/numerics/adamw.hpp"
#include "lvr/sft/train.hpp"

namespace lvr {

struct RlIterRecord {
  int iter = 0;
  double mean_reward = 0;
  double mean_format = 0;
  double mean_accuracy = 0;
  double mean_ratio = 0;
  double clip_fraction = 0;
  double kl = 0;
  double trigger_fraction = 0;
  double loss = 0;
  std::optional<EvalReport> heldout;

  Json to_json() const {
    Json j;
    j["iter"] = iter;
    j["mean_reward"] = mean_reward;
    j["mean_format"] = mean_format;
    j["mean_accuracy"] = mean_accuracy;
    j["mean_ratio"] = mean_ratio;
    j["clip_fraction"] = clip_fraction;
    j["kl"] = kl;
    j["trigger_fraction"] = trigger_fraction;
    j["loss"] = loss;
    if (heldout) {
      j["heldout_accuracy"] = heldout->overall.accuracy();
      j["heldout_format_rate"] = heldout->format_rate;
    }
    return j;
  }
};

struct RlResult {
  std::vector<RlIterRecord> history;
  std::optional<EvalReport> initial_eval;
  std::optional<EvalReport> final_eval;
};

struct RlRunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.jsonl, checkpoints, rollout dumps
  std::optional<DecodeConfig> eval_decode;        // default: the rollout decode config
  std::size_t threads = 1;
  const Vocab* vocab = nullptr;                   // needed for rollout dumps
  std::function<void(const RlIterRecord&)> on_iter;
};

/// Collects one batch of groups from `policy_old` for the given examples.
template <std::floating_point T>
std::vector<Group<T>> collect_groups(const ModelWeights<T>& policy_old,
                                     std::span<const EncodedExample<T>* const> examples,
                                     const RLConfig& cfg, std::uint64_t seed,
                                     std::size_t threads) {
  const auto dc = cfg.rollout_decode();
  const std::size_t G = static_cast<std::size_t>(cfg.group_size);
  std::vector<Group<T>> groups(examples.size());
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = *examples[k];
    groups[k].instance_id = ex.instance.id;
    groups[k].prompt = assemble_prompt(ex.instance, ex.visual_tokens);
    groups[k].gold = ex.instance.answer;
    groups[k].records.resize(G);
  }
  parallel_for(examples.size() * G, threads, [&](std::size_t job) {
    const std::size_t k = job / G, i = job % G;
    const auto& ex = *examples[k];
    const auto s = rollout_seed(splitmix64(seed + k), i);
    const int fixed = roi_fixed_steps(dc, ex.instance, policy_old.config.patch_size);
    groups[k].records[i] = make_record(
        generate(policy_old, groups[k].prompt, dc, s, DecodeBackend::kCached, fixed), s);
  });
  for (auto& g : groups) {
    bool any_finished = false;
    for (const auto& r : g.records) any_finished = any_finished || r.finished();
    if (!any_finished) warn("rollout group " + g.instance_id + ": no response reached EOS; kept");
    const auto rewards = compute_rewards(g, cfg.format_weight, cfg.accuracy_weight);
    g.advantages = normalize_advantages(rewards);
  }
  return groups;
}

/// GRPO over the latent-aware policy. The reference policy is frozen at the
/// incoming weights. Each iteration samples prompts_per_step groups from the
/// current weights (which stay untouched while rollouts run, so they act as
/// the old policy), then takes updates_per_step AdamW steps on the clipped
/// objective.
template <std::floating_point T>
RlResult train_rl(ModelWeights<T>& w, const RLConfig& cfg,
                  std::span<const EncodedExample<T>> train,
                  std::span<const EncodedExample<T>> heldout, const RlRunOptions& run = {}) {
  cfg.validate();
  require(!train.empty(), ErrorKind::kContract, "train_rl: empty prompt set");
  const ModelWeights<T> ref = w.clone();
  auto params = w.parameters();
  AdamW<T> adam(AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();

  const auto eval_cfg = run.eval_decode.value_or(cfg.rollout_decode());
  const std::size_t n_eval = std::min(heldout.size(), static_cast<std::size_t>(cfg.eval_instances));
  auto evaluate = [&]() {
    return batch_eval(w, heldout.subspan(0, n_eval), eval_cfg, run.threads);
  };

  std::ofstream metrics;
  if (run.out_dir) {
    std::filesystem::create_directories(*run.out_dir);
    metrics.open(*run.out_dir / "metrics.jsonl", std::ios::trunc);
  }
  auto dump_groups = [&](const std::vector<Group<T>>& groups, const std::filesystem::path& path) {
    if (!run.vocab) return;
    std::ofstream out(path, std::ios::trunc);
    for (const auto& g : groups) out << group_to_json(g, *run.vocab, true).dump() << '\n';
  };

  RlResult result;
  if (n_eval > 0) result.initial_eval = evaluate();

  for (int iter = 0; iter < cfg.steps; ++iter) {
    std::vector<const EncodedExample<T>*> batch;
    for (int k = 0; k < cfg.prompts_per_step; ++k) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&train[order[cursor++]]);
    }
    const std::uint64_t iter_seed = splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(iter)));
    auto groups = collect_groups(static_cast<const ModelWeights<T>&>(w),
                                 std::span<const EncodedExample<T>* const>(batch), cfg, iter_seed,
                                 run.threads);
    fill_reference_logprobs(ref, std::span<Group<T>>(groups), cfg.temperature);

    RlIterRecord rec;
    rec.iter = iter;
    std::size_t n = 0;
    for (const auto& g : groups) {
      for (const auto& r : g.records) {
        rec.mean_reward += r.reward.total;
        rec.mean_format += r.reward.format;
        rec.mean_accuracy += r.reward.accuracy;
        rec.trigger_fraction += r.triggered() ? 1.0 : 0.0;
        ++n;
      }
    }
    rec.mean_reward /= static_cast<double>(n);
    rec.mean_format /= static_cast<double>(n);
    rec.mean_accuracy /= static_cast<double>(n);
    rec.trigger_fraction /= static_cast<double>(n);

    for (int u = 0; u < cfg.updates_per_step; ++u) {
      w.zero_grad();
      Tape<T> tape;
      std::optional<GrpoLoss<T>> loss;
      try {
        loss.emplace(grpo_batch_loss(tape, w, std::span<const Group<T>>(groups), cfg));
        if (!std::isfinite(loss->stats.loss)) fail(ErrorKind::kNumeric, "non-finite GRPO loss");
        tape.backward(loss->loss);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumeric) throw;
        std::string where;
        if (run.out_dir) {
          const auto path = *run.out_dir / "nan_rollouts.jsonl";
          dump_groups(groups, path);
          where = "; rollouts written to " + path.string();
        }
        fail(ErrorKind::kNumeric,
             std::string(e.what()) + " at iteration " + std::to_string(iter) + where);
      }
      ensure_grads(std::span(params));
      adam.step(params);
      if (u == 0) {
        rec.mean_ratio = loss->stats.mean_ratio;
        rec.clip_fraction = loss->stats.clip_fraction;
        rec.kl = loss->stats.kl;
        rec.loss = loss->stats.loss;
      }
    }

    const bool last = iter + 1 == cfg.steps;
    if (n_eval > 0 && ((cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) || last)) {
      rec.heldout = evaluate();
      if (last) result.final_eval = rec.heldout;
    }
    if (run.out_dir && cfg.dump_rollouts_every > 0 && (iter + 1) % cfg.dump_rollouts_every == 0) {
      dump_groups(groups, *run.out_dir / ("rollouts_iter" + std::to_string(iter + 1) + ".jsonl"));
    }
    if (metrics.is_open()) metrics << rec.to_json().dump() << '\n' << std::flush;
    if (run.on_iter) run.on_iter(rec);
    result.history.push_back(rec);
    if (run.out_dir && run.vocab && cfg.checkpoint_every > 0 &&
        (iter + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(*run.out_dir / ("checkpoint_iter" + std::to_string(iter + 1) + ".lvr"), w,
                      *run.vocab);
    }
  }
  if (n_eval > 0 && !result.final_eval) result.final_eval = evaluate();
  return result;
}

}  // namespace lvr
