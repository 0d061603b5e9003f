#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lvr/data/assemble.hpp"
#include "lvr/decode/eval.hpp"
#include "lvr/model/checkpoint.hpp"
#include "lvr/numerics/adamw.hpp"
#include "lvr/sft/loss.hpp"

namespace lvr {

struct SFTConfig {
  double lambda_lvr = 1.0;
  double lambda_switch = 0.0;
  double learning_rate = 1e-5;
  double weight_decay = 0.0;
  int warmup_steps = 0;
  int steps = 1000;
  int max_pack_len = 256;
  std::uint64_t seed = 0;
  LatentFeed latent_feed = LatentFeed::kTeacherForced;
  // false trains plain VQA sequences without a latent block.
  bool latent_block = true;
  // Supervise the end anchor (LatentEnd decoding); makes the anchor trainable.
  bool latent_end = false;
  int eval_every = 0;  // 0: evaluate only after the last step
  int eval_instances = 256;
  int checkpoint_every = 0;

  void validate() const {
    require(lambda_lvr >= 0, ErrorKind::kConfig, "sft.lambda_lvr must be non-negative");
    require(lambda_switch >= 0, ErrorKind::kConfig, "sft.lambda_switch must be non-negative");
    require(learning_rate > 0, ErrorKind::kConfig, "sft.learning_rate must be positive");
    require(weight_decay >= 0, ErrorKind::kConfig, "sft.weight_decay must be non-negative");
    require(steps >= 0 && warmup_steps >= 0, ErrorKind::kConfig, "sft.steps must be >= 0");
    require(max_pack_len > 0, ErrorKind::kConfig, "sft.max_pack_len must be positive");
    require(eval_every >= 0 && checkpoint_every >= 0 && eval_instances >= 0,
            ErrorKind::kConfig, "sft intervals must be non-negative");
  }
};

inline Json to_json(const SFTConfig& c) {
  Json j;
  j["lambda_lvr"] = c.lambda_lvr;
  j["lambda_switch"] = c.lambda_switch;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["steps"] = c.steps;
  j["max_pack_len"] = c.max_pack_len;
  j["seed"] = c.seed;
  j["latent_feed"] = to_string(c.latent_feed);
  j["latent_block"] = c.latent_block;
  j["latent_end"] = c.latent_end;
  j["eval_every"] = c.eval_every;
  j["eval_instances"] = c.eval_instances;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

inline SFTConfig sft_config_from_json(const Json& j, SFTConfig c = {}) {
  JsonFields f(j, "sft");
  f.read("lambda_lvr", c.lambda_lvr);
  f.read("lambda_switch", c.lambda_switch);
  f.read("learning_rate", c.learning_rate);
  f.read("weight_decay", c.weight_decay);
  f.read("warmup_steps", c.warmup_steps);
  f.read("steps", c.steps);
  f.read("max_pack_len", c.max_pack_len);
  f.read("seed", c.seed);
  f.read_enum("latent_feed", c.latent_feed, parse_latent_feed);
  f.read("latent_block", c.latent_block);
  f.read("latent_end", c.latent_end);
  f.read("eval_every", c.eval_every);
  f.read("eval_instances", c.eval_instances);
  f.read("checkpoint_every", c.checkpoint_every);
  f.finish();
  c.validate();
  return c;
}

/// Linear warmup to the base rate, then constant.
inline double scheduled_lr(double base, int warmup, int step) {
  if (warmup <= 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

/// Makes sure every trainable tensor has a gradient buffer, so tensors that
/// a batch did not touch get a zero update instead of a contract error.
template <std::floating_point T>
void ensure_grads(std::span<Parameter<T>> params) {
  for (auto& p : params) {
    if (p.trainable) p.tensor.ensure_grad();
  }
}

template <std::floating_point T>
AssembleOptions assemble_options(const SFTConfig& cfg, const ModelWeights<T>& w) {
  return AssembleOptions{cfg.latent_block, cfg.latent_block && cfg.latent_end,
                         w.config.patch_size};
}

/// Forward + joint loss over one packed batch, honoring the latent feed mode.
template <std::floating_point T>
JointLoss<T> sft_batch_loss(Tape<T>& tape, const ModelWeights<T>& w,
                            const std::vector<const MixedSequence<T>*>& seqs,
                            const SFTConfig& cfg) {
  auto batch = make_sft_batch(w, seqs);
  ForwardOutput<T> out;
  if (cfg.latent_feed == LatentFeed::kSelfFed) {
    out = forward_self_fed(tape, w, batch.inputs, batch.latent_input_rows,
                           longest_latent_run(batch.latent_input_rows));
  } else {
    out = forward_rows(tape, w, batch.inputs);
  }
  return joint_loss(tape, w, out, batch, LossWeights{cfg.lambda_lvr, cfg.lambda_switch});
}

struct SftStepRecord {
  int step = 0;
  LossBreakdown loss;
  double lr = 0;
  std::optional<double> heldout_accuracy;

  Json to_json() const {
    Json j;
    j["step"] = step;
    j["L_NTP"] = loss.ntp;
    j["L_LVR"] = loss.lvr;
    j["L_switch"] = loss.switch_loss;
    j["L_total"] = loss.total;
    j["text_targets"] = loss.text_targets;
    j["latent_targets"] = loss.latent_targets;
    j["lr"] = lr;
    if (heldout_accuracy) j["heldout_accuracy"] = *heldout_accuracy;
    return j;
  }
};

struct SftResult {
  std::vector<SftStepRecord> history;
  std::optional<EvalReport> final_eval;
  std::size_t skipped_instances = 0;
};

struct SftRunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.jsonl, checkpoints, dumps
  DecodeConfig eval_decode;                       // used for held-out evaluation
  std::size_t threads = 1;
  std::function<void(const SftStepRecord&)> on_step;
};

/// AdamW over trainable tensors on packed teacher-forced (or self-fed)
/// batches. Batches are formed once by first-fit-decreasing and visited in a
/// seeded random order each epoch.
template <std::floating_point T>
SftResult train_sft(ModelWeights<T>& w, const Vocab& vocab, const SFTConfig& cfg,
                    std::span<const EncodedExample<T>> train,
                    std::span<const EncodedExample<T>> heldout, const SftRunOptions& run = {}) {
  cfg.validate();
  require(!train.empty(), ErrorKind::kContract, "train_sft: empty training set");
  if (cfg.latent_end && cfg.latent_block) w.set_anchor_trainable(true);
  const auto opt = assemble_options(cfg, w);
  const auto max_len = static_cast<std::size_t>(w.config.max_seq_len);

  SftResult result;
  std::vector<std::size_t> kept, lengths;
  for (std::size_t i = 0; i < train.size(); ++i) {
    try {
      lengths.push_back(
          assemble_sft_sequence(train[i].instance, train[i].visual_tokens, opt, max_len).size());
      kept.push_back(i);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kCapacity) throw;
      warn(std::string("skipping instance: ") + e.what());
      ++result.skipped_instances;
    }
  }
  require(!kept.empty(), ErrorKind::kCapacity, "no training instance fits max_seq_len");
  const auto packs = pack_batches(lengths, static_cast<std::size_t>(cfg.max_pack_len));

  std::ofstream metrics;
  if (run.out_dir) {
    std::filesystem::create_directories(*run.out_dir);
    metrics.open(*run.out_dir / "metrics.jsonl", std::ios::trunc);
  }
  const std::size_t n_eval = std::min(heldout.size(), static_cast<std::size_t>(cfg.eval_instances));
  auto evaluate = [&]() {
    return batch_eval(w, heldout.subspan(0, n_eval), run.eval_decode, run.threads);
  };

  auto params = w.parameters();
  AdamW<T> adam(AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(packs.size());
  std::size_t cursor = order.size();

  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& pack = packs[order[cursor++]];
    std::vector<MixedSequence<T>> seqs;
    std::vector<const MixedSequence<T>*> ptrs;
    seqs.reserve(pack.members.size());
    for (std::size_t m : pack.members) {
      const auto& ex = train[kept[m]];
      seqs.push_back(assemble_sft_sequence(ex.instance, ex.visual_tokens, opt, max_len));
    }
    for (const auto& s : seqs) ptrs.push_back(&s);

    w.zero_grad();
    Tape<T> tape;
    auto abort_non_finite = [&](Json dump, const std::string& why) {
      dump["step"] = step;
      Json ids = Json::array();
      for (std::size_t m : pack.members) ids.push_back(train[kept[m]].instance.id);
      dump["batch"] = ids;
      std::string where;
      if (run.out_dir) {
        const auto path = *run.out_dir / "nan_batch.json";
        std::ofstream(path) << dump.dump(2) << '\n';
        where = "; dump written to " + path.string();
      }
      fail(ErrorKind::kNumeric, why + " at step " + std::to_string(step) + " in batch " +
                                    ids.dump() + where);
    };
    std::optional<JointLoss<T>> attempt;
    try {
      attempt.emplace(sft_batch_loss(tape, w, ptrs, cfg));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      Json dump;
      dump["error"] = e.what();
      abort_non_finite(dump, "non-finite forward pass");
    }
    auto& loss = *attempt;
    if (!std::isfinite(loss.breakdown.total)) {
      Json dump;
      dump["L_NTP"] = loss.breakdown.ntp;
      dump["L_LVR"] = loss.breakdown.lvr;
      dump["L_switch"] = loss.breakdown.switch_loss;
      abort_non_finite(dump, "non-finite loss");
    }
    tape.backward(loss.total);
    ensure_grads(std::span(params));
    const double lr = scheduled_lr(cfg.learning_rate, cfg.warmup_steps, step);
    adam.set_learning_rate(lr);
    adam.step(params);

    SftStepRecord rec{step, loss.breakdown, lr, std::nullopt};
    const bool last = step + 1 == cfg.steps;
    if (n_eval > 0 && ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || last)) {
      auto report = evaluate();
      rec.heldout_accuracy = report.overall.accuracy();
      if (last) result.final_eval = report;
    }
    if (metrics.is_open()) metrics << rec.to_json().dump() << '\n' << std::flush;
    if (run.on_step) run.on_step(rec);
    result.history.push_back(rec);
    if (run.out_dir && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(*run.out_dir / ("checkpoint_step" + std::to_string(step + 1) + ".lvr"), w,
                      vocab);
    }
  }
  return result;
}

}  // namespace lvr
