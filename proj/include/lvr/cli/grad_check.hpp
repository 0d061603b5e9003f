#pragma once

#include <random>
#include <span>
#include <vector>

#include "lvr/data/dataset.hpp"
#include "lvr/grpo/loss.hpp"
#include "lvr/numerics/gradcheck.hpp"
#include "lvr/sft/train.hpp"

namespace lvr {

/// Overwrites trainable tensors (and the end anchor) with N(0, std). Checks
/// run at such a point because the default init zeroes the LVR head's output
/// layer, which makes some gradients exactly zero.
inline void randomize_parameters(ModelWeights<double>& w, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  for (auto& p : w.parameters()) {
    if (!p.trainable && p.name != "latent_end_anchor") continue;
    auto t = p.tensor;
    for (auto& v : t.data()) v = dist(rng);
  }
}

struct GradCheckSetup {
  ModelConfig model;
  DataConfig data;
  std::uint64_t seed = 0;
  double init_std = 0.3;
  std::size_t max_elements_per_tensor = 0;
  // Five-point stencil at a wide step: the central difference at 1e-5 is
  // dominated by truncation on gradients near 1e-7 and by roundoff on
  // gradients that are exactly zero (the pad embedding row).
  double epsilon = 1e-2;
  int stencil_points = 4;
};

/// Joint SFT loss over two packed instances.
inline GradCheckReport sft_grad_check(const GradCheckSetup& s, const SFTConfig& cfg) {
  auto w = init_weights<double>(s.model, s.seed);
  randomize_parameters(w, s.init_std, s.seed + 1);
  if (cfg.latent_block && cfg.latent_end) w.set_anchor_trainable(true);
  Vocab vocab;
  std::vector<MixedSequence<double>> seqs;
  for (const auto& g : generate_dataset(s.data, vocab, s.seed, 2)) {
    seqs.push_back(assemble_sft_sequence(g.instance, w.vision.encode(g.image),
                                         assemble_options(cfg, w),
                                         static_cast<std::size_t>(s.model.max_seq_len)));
  }
  std::vector<const MixedSequence<double>*> ptrs;
  for (const auto& q : seqs) ptrs.push_back(&q);
  auto params = w.parameters();
  return finite_diff_check(
      [&](Tape<double>& tape) { return sft_batch_loss(tape, w, ptrs, cfg).total; },
      std::span(params), GradCheckOptions{s.epsilon, s.max_elements_per_tensor, s.seed,
                                         s.stencil_points});
}

/// Rollout record that follows the supervised layout: the ROI visual tokens
/// as latents, then the gold answer. Guarantees latent positions in a check.
inline RolloutRecord<double> gold_record(const SFTInstance& inst, const Tensor<double>& visual,
                                         int patch_size, std::size_t max_len) {
  const auto prompt = assemble_prompt(inst, visual);
  const auto full = assemble_sft_sequence(inst, visual, AssembleOptions{true, false, patch_size},
                                          max_len);
  DecodeTrace<double> t;
  t.prompt_length = prompt.size();
  LatentSegment<double> seg;
  for (std::size_t i = prompt.size(); i < full.size(); ++i) {
    const auto& e = full[i];
    if (e.kind == ElementKind::kText) {
      t.response.push_back(MixedElement<double>::text(e.token));
      if (e.token == Vocab::kLvrStart) seg.start_index = t.response.size() - 1;
    } else {
      t.response.push_back(MixedElement<double>::latent(e.vector));
      ++seg.steps;
    }
    t.logprobs.push_back(0.0);
    t.sampled.push_back(e.kind == ElementKind::kText && e.token != Vocab::kLvrEnd);
  }
  seg.stop_reason = "fixed";
  t.segments.push_back(seg);
  t.stop_reason = "eos";
  return make_record(std::move(t), 0);
}

/// GRPO objective on a two-rollout group (one sampled, one following the gold
/// layout) with old log-probs slightly off the current policy and a distinct
/// reference policy, so ratio, clip and KL paths are all active.
inline GradCheckReport rl_grad_check(const GradCheckSetup& s, const RLConfig& cfg) {
  auto w = init_weights<double>(s.model, s.seed);
  randomize_parameters(w, s.init_std, s.seed + 1);
  auto ref = w.clone();
  randomize_parameters(ref, s.init_std, s.seed + 2);
  Vocab vocab;
  const auto gen = generate_dataset(s.data, vocab, s.seed, 1);
  const auto& inst = gen[0].instance;
  const auto visual = w.vision.encode(gen[0].image);

  std::vector<Group<double>> groups(1);
  auto& g = groups[0];
  g.instance_id = inst.id;
  g.prompt = assemble_prompt(inst, visual);
  g.gold = inst.answer;
  const int k = roi_fixed_steps(cfg.rollout_decode(), inst, s.model.patch_size);
  g.records.push_back(make_record(
      generate(w, g.prompt, cfg.rollout_decode(), s.seed, DecodeBackend::kCached, k), s.seed));
  g.records.push_back(gold_record(inst, visual, s.model.patch_size,
                                  static_cast<std::size_t>(s.model.max_seq_len)));
  g.advantages = {1.0, -1.0};

  std::mt19937_64 rng(s.seed + 3);
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto& r : g.records) {
    r.old_logprobs = replay_logprobs(w, g.prompt, r, cfg.temperature);
    for (auto& v : r.old_logprobs) v += jitter(rng);
  }
  fill_reference_logprobs(ref, std::span<Group<double>>(groups), cfg.temperature);

  auto params = w.parameters();
  return finite_diff_check(
      [&](Tape<double>& tape) {
        return grpo_batch_loss(tape, w, std::span<const Group<double>>(groups), cfg).loss;
      },
      std::span(params), GradCheckOptions{s.epsilon, s.max_elements_per_tensor, s.seed,
                                         s.stencil_points});
}

inline Json to_json(const GradCheckReport& r) {
  return Json{{"max_relative_error", r.max_relative_error},
              {"worst_parameter", r.worst_parameter},
              {"worst_index", r.worst_index},
              {"worst_analytic", r.worst_analytic},
              {"worst_numeric", r.worst_numeric},
              {"elements_checked", r.elements_checked}};
}

}  // namespace lvr
