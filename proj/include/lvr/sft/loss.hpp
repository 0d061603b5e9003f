#pragma once

#include <span>
#include <vector>

#include "lvr/log.hpp"
#include "lvr/model/transformer.hpp"
#include "lvr/numerics/ops.hpp"

namespace lvr {

enum class LatentFeed { kTeacherForced, kSelfFed };

inline std::string to_string(LatentFeed f) {
  return f == LatentFeed::kTeacherForced ? "teacher_forced" : "self_fed";
}

inline LatentFeed parse_latent_feed(const std::string& s) {
  if (s == "teacher_forced") return LatentFeed::kTeacherForced;
  if (s == "self_fed") return LatentFeed::kSelfFed;
  fail(ErrorKind::kConfig, "unknown latent_feed '" + s + "'");
}

/// (1/T) * sum_t ||pred_t - target_t||^2 over latent-target rows. An empty
/// block contributes 0 and logs a warning.
template <std::floating_point T>
Tensor<T> lvr_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.rows() == 0 || pred.numel() == 0) {
    warn("lvr_loss: no latent targets in batch");
    return Tensor<T>::scalar(T{0});
  }
  return ops::mse(tape, pred, target);
}

/// Mean negative log-likelihood of targets[i] at logits row rows[i].
template <std::floating_point T>
Tensor<T> ntp_loss(Tape<T>& tape, const Tensor<T>& logits, const std::vector<std::size_t>& rows,
                   const std::vector<int>& targets) {
  require(!rows.empty(), ErrorKind::kContract, "ntp_loss: no text-target positions");
  require(rows.size() == targets.size(), ErrorKind::kContract, "ntp_loss: index lists differ");
  auto lp = ops::log_softmax(tape, ops::gather_rows(tape, logits, rows));
  std::vector<std::size_t> r(rows.size()), c(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    r[i] = i;
    c[i] = static_cast<std::size_t>(targets[i]);
  }
  auto picked = ops::select_entries(tape, lp, r, c);
  return ops::scale(tape, ops::sum(tape, picked), T{-1} / static_cast<T>(rows.size()));
}

/// Mean BCE of p(<|lvr_end|>) against 0/1 switch targets.
template <std::floating_point T>
Tensor<T> mode_switch_loss(Tape<T>& tape, const Tensor<T>& logits,
                           const std::vector<std::size_t>& rows, const std::vector<int>& targets) {
  if (rows.empty()) return Tensor<T>::scalar(T{0});
  return ops::class_bce(tape, logits, rows, targets, static_cast<std::size_t>(Vocab::kLvrEnd));
}

struct LossWeights {
  double lambda_lvr = 1.0;
  double lambda_switch = 0.0;
};

struct LossBreakdown {
  double ntp = 0;
  double lvr = 0;
  double switch_loss = 0;
  double total = 0;
  std::size_t text_targets = 0;
  std::size_t latent_targets = 0;
};

/// Targets of a packed batch, as row indices into the packed forward output.
struct BatchTargets {
  std::vector<std::size_t> text_rows;
  std::vector<int> text_ids;
  std::vector<std::size_t> latent_rows;
  std::vector<ops::RowPick> latent_picks;  // source 0: fixed targets, 1: end anchor
  std::vector<std::size_t> switch_rows;
  std::vector<int> switch_ids;
};

template <std::floating_point T>
struct SftBatch {
  InputRows<T> inputs;
  BatchTargets targets;
  Tensor<T> latent_target_values;  // [n_fixed x d]
  // Rows that take a latent input, with the row whose head output feeds them
  // in self-fed mode.
  std::vector<std::size_t> latent_input_rows;
  std::vector<std::size_t> anchor_input_rows;
};

/// Packs sequences into one forward pass and collects their targets.
/// Inputs flagged input_is_anchor read the live anchor tensor (source 2).
template <std::floating_point T>
SftBatch<T> make_sft_batch(const ModelWeights<T>& w,
                           const std::vector<const MixedSequence<T>*>& seqs) {
  SftBatch<T> b;
  b.inputs = build_inputs(w, seqs);
  b.inputs.sources.push_back(w.latent_end_anchor);
  const std::size_t d = w.config.d();
  std::vector<T> fixed;
  std::size_t n_fixed = 0;
  auto& t = b.targets;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const std::size_t base = b.inputs.sequence_offset[s];
    const auto& seq = *seqs[s];
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& e = seq[i];
      const std::size_t row = base + i;
      if (e.text_target) {
        t.text_rows.push_back(row);
        t.text_ids.push_back(*e.text_target);
      }
      if (e.latent_target) {
        t.latent_rows.push_back(row);
        t.latent_picks.push_back({0, n_fixed++});
        fixed.insert(fixed.end(), e.latent_target->begin(), e.latent_target->end());
      } else if (e.latent_target_is_anchor) {
        t.latent_rows.push_back(row);
        t.latent_picks.push_back({1, 0});
      }
      if (e.switch_target) {
        t.switch_rows.push_back(row);
        t.switch_ids.push_back(*e.switch_target);
      }
      if (e.kind == ElementKind::kLatent) {
        require(i > 0, ErrorKind::kContract, "latent input at sequence start");
        b.latent_input_rows.push_back(row);
      }
      if (e.input_is_anchor) {
        b.inputs.picks[row] = {2, 0};
        b.anchor_input_rows.push_back(row);
      }
    }
  }
  if (n_fixed == 0) {
    fixed.assign(d, T{0});
    n_fixed = 1;
  }
  b.latent_target_values = Tensor<T>(Shape{n_fixed, d}, std::move(fixed));
  return b;
}

/// Self-fed latent inputs: every latent input row takes the LVR-head output of
/// the row before it. One forward pass fixes at least one more latent step, so
/// `passes` = longest latent run substitutions reach the exact fixed point;
/// the whole chain stays on the tape.
template <std::floating_point T>
ForwardOutput<T> forward_self_fed(Tape<T>& tape, const ModelWeights<T>& w, InputRows<T> in,
                                  const std::vector<std::size_t>& latent_rows,
                                  std::size_t passes) {
  auto out = forward_rows(tape, w, in);
  if (latent_rows.empty()) return out;
  std::vector<std::size_t> prev(latent_rows.size());
  for (std::size_t i = 0; i < latent_rows.size(); ++i) prev[i] = latent_rows[i] - 1;
  const std::size_t src = in.sources.size();
  in.sources.emplace_back();
  for (std::size_t p = 0; p < passes; ++p) {
    in.sources[src] = apply_lvr_head(tape, w, ops::gather_rows(tape, out.hidden, prev));
    for (std::size_t i = 0; i < latent_rows.size(); ++i) in.picks[latent_rows[i]] = {src, i};
    out = forward_rows(tape, w, in);
  }
  return out;
}

/// Longest run of consecutive latent inputs within one sequence.
inline std::size_t longest_latent_run(const std::vector<std::size_t>& rows) {
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    run = (i > 0 && rows[i] == rows[i - 1] + 1) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

template <std::floating_point T>
struct JointLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// L = L_NTP + lambda_lvr * L_LVR + lambda_switch * L_switch, each averaged
/// over its targeted rows pooled across the packed batch. Terms with zero
/// weight are reported but left out of the total.
template <std::floating_point T>
JointLoss<T> joint_loss(Tape<T>& tape, const ModelWeights<T>& w, const ForwardOutput<T>& out,
                        const SftBatch<T>& batch, const LossWeights& lw) {
  const auto& t = batch.targets;
  JointLoss<T> r;
  auto ntp = ntp_loss(tape, out.logits, t.text_rows, t.text_ids);
  r.breakdown.text_targets = t.text_rows.size();
  r.breakdown.latent_targets = t.latent_rows.size();
  r.breakdown.ntp = static_cast<double>(ntp.item());
  r.total = ntp;

  Tape<T> off(false);
  Tape<T>& lvr_tape = lw.lambda_lvr > 0 ? tape : off;
  Tensor<T> lvr = Tensor<T>::scalar(T{0});
  if (!t.latent_rows.empty()) {
    auto pred = apply_lvr_head(lvr_tape, w, ops::gather_rows(lvr_tape, out.hidden, t.latent_rows));
    auto target = ops::stack_rows(
        lvr_tape, std::vector<Tensor<T>>{batch.latent_target_values, w.latent_end_anchor},
        t.latent_picks);
    lvr = lvr_loss(lvr_tape, pred, target);
  } else if (lw.lambda_lvr > 0) {
    warn("lvr_loss: no latent targets in batch");
  }
  r.breakdown.lvr = static_cast<double>(lvr.item());
  if (lw.lambda_lvr > 0 && !t.latent_rows.empty()) {
    r.total = ops::add(tape, r.total, ops::scale(tape, lvr, static_cast<T>(lw.lambda_lvr)));
  }

  Tape<T>& sw_tape = lw.lambda_switch > 0 ? tape : off;
  auto sw = mode_switch_loss(sw_tape, out.logits, t.switch_rows, t.switch_ids);
  r.breakdown.switch_loss = static_cast<double>(sw.item());
  if (lw.lambda_switch > 0 && !t.switch_rows.empty()) {
    r.total = ops::add(tape, r.total, ops::scale(tape, sw, static_cast<T>(lw.lambda_switch)));
  }
  r.breakdown.total = static_cast<double>(r.total.item());
  return r;
}

}  // namespace lvr
