#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <span>
#include <vector>

#include "lvr/grpo/rollout.hpp"
#include "lvr/model/transformer.hpp"

namespace lvr {

/// One [prompt || response] sequence to replay.
template <std::floating_point T>
struct ReplayItem {
  const MixedSequence<T>* prompt = nullptr;
  const RolloutRecord<T>* record = nullptr;
};

struct ReplayPlan {
  std::vector<std::size_t> rows;  // logit row predicting each token
  std::vector<std::size_t> tokens;
};

/// Packs [prompt || response] for every item and locates the logit row of
/// every sampled text token, in item order.
template <std::floating_point T>
std::pair<InputRows<T>, ReplayPlan> plan_replay(const ModelWeights<T>& w,
                                                const std::vector<ReplayItem<T>>& items) {
  std::vector<MixedSequence<T>> seqs(items.size());
  std::vector<const MixedSequence<T>*> ptrs;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& rec = *items[k].record;
    const auto& resp = rec.trace.response;
    require(rec.trace.prompt_length == items[k].prompt->size(), ErrorKind::kContract,
            "replay: record prompt length does not match its prompt");
    require(rec.token_indices.size() == rec.old_logprobs.size(), ErrorKind::kContract,
            "replay: token and log-prob counts differ");
    for (std::size_t i : rec.token_indices) {
      require(i < resp.size() && resp[i].kind == ElementKind::kText, ErrorKind::kContract,
              "replay: token index " + std::to_string(i) + " is not a text position");
    }
    seqs[k] = *items[k].prompt;
    for (const auto& e : resp) seqs[k].push(e);
  }
  for (const auto& s : seqs) ptrs.push_back(&s);
  auto in = build_inputs(w, ptrs);
  ReplayPlan plan;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& rec = *items[k].record;
    for (std::size_t i : rec.token_indices) {
      plan.rows.push_back(in.sequence_offset[k] + rec.trace.position(i) - 1);
      plan.tokens.push_back(static_cast<std::size_t>(rec.trace.response[i].token));
    }
  }
  return {std::move(in), std::move(plan)};
}

/// log_softmax(logits[row] / temperature)[token] for every planned token.
/// Only the planned rows are read.
template <std::floating_point T>
Tensor<T> planned_logprobs(Tape<T>& tape, const Tensor<T>& logits, const ReplayPlan& plan,
                           double temperature) {
  std::vector<std::size_t> picked(plan.rows.size());
  std::iota(picked.begin(), picked.end(), std::size_t{0});
  auto rows = ops::gather_rows(tape, logits, plan.rows);
  auto lp = ops::log_softmax(tape, ops::scale(tape, rows, T{1} / static_cast<T>(temperature)));
  return ops::select_entries(tape, lp, picked, plan.tokens);
}

/// Log-probs of every sampled text token of every item, in item order, from a
/// single packed forward. Latent positions receive the recorded vectors as
/// constant inputs: no gradient reaches their values, but it does reach the
/// layers that attend to them. Logits are divided by `temperature` exactly as
/// during sampling, so replay under the sampling weights reproduces the
/// recorded values.
template <std::floating_point T>
Tensor<T> replay_logprobs(Tape<T>& tape, const ModelWeights<T>& w,
                          const std::vector<ReplayItem<T>>& items, double temperature) {
  const auto [in, plan] = plan_replay(w, items);
  const auto out = forward_rows(tape, w, in);
  return planned_logprobs(tape, out.logits, plan, temperature);
}

template <std::floating_point T>
std::vector<double> replay_logprobs(const ModelWeights<T>& w, const MixedSequence<T>& prompt,
                                    const RolloutRecord<T>& record, double temperature) {
  Tape<T> off(false);
  const auto lp = replay_logprobs(off, w, {ReplayItem<T>{&prompt, &record}}, temperature);
  return std::vector<double>(lp.data().begin(), lp.data().end());
}

struct GrpoStats {
  double surrogate = 0;  // weighted clipped objective (to maximize)
  double kl = 0;         // weighted k3 estimate
  double loss = 0;       // -(surrogate - beta * kl)
  double mean_ratio = 0;
  double clip_fraction = 0;  // share of tokens with ratio outside [1-eps, 1+eps]
  std::size_t tokens = 0;
};

template <std::floating_point T>
struct GrpoLoss {
  Tensor<T> loss;
  GrpoStats stats;
};

/// Per-token inputs aligned with the replayed log-probs.
struct TokenTable {
  std::vector<double> old_logprobs;
  std::vector<double> ref_logprobs;
  std::vector<double> advantages;
  std::vector<double> weights;  // 1 / (|y_i| * G * groups)
};

/// Clipped surrogate with a k3 KL penalty:
///   loss = -sum_t w_t * (min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t) - beta * k3_t)
/// with r_t = exp(new_t - old_t) and k3_t = exp(ref_t - new_t) - (ref_t - new_t) - 1.
template <std::floating_point T>
GrpoLoss<T> grpo_loss(Tape<T>& tape, const Tensor<T>& new_lp, const TokenTable& tt,
                      double clip_eps, double beta) {
  const std::size_t n = new_lp.numel();
  require(tt.old_logprobs.size() == n && tt.ref_logprobs.size() == n &&
              tt.advantages.size() == n && tt.weights.size() == n,
          ErrorKind::kContract, "grpo_loss: token tables are not aligned");
  GrpoStats st;
  st.tokens = n;
  std::vector<double> dloss(n, 0.0);
  std::size_t clipped = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double lp = static_cast<double>(new_lp[t]);
    const double r = std::exp(lp - tt.old_logprobs[t]);
    if (!std::isfinite(r)) {
      fail(ErrorKind::kNumeric, "grpo_loss: non-finite importance ratio at token " +
                                    std::to_string(t));
    }
    const double a = tt.advantages[t];
    const double rc = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps);
    const double unclipped = r * a, clipped_term = rc * a;
    const double s = std::min(unclipped, clipped_term);
    // Gradient flows only through the unclipped branch when it is selected.
    const double ds = unclipped <= clipped_term ? r * a : 0.0;
    const double x = tt.ref_logprobs[t] - lp;
    const double k3 = std::exp(x) - x - 1.0;
    const double dk3 = 1.0 - std::exp(x);
    st.surrogate += tt.weights[t] * s;
    st.kl += tt.weights[t] * k3;
    st.mean_ratio += r;
    clipped += (r != rc);
    dloss[t] = -tt.weights[t] * (ds - beta * dk3);
  }
  st.loss = -(st.surrogate - beta * st.kl);
  if (n > 0) {
    st.mean_ratio /= static_cast<double>(n);
    st.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  }
  Tensor<T> loss(Shape{}, tape.tracks(new_lp));
  loss[0] = static_cast<T>(st.loss);
  if (loss.requires_grad()) {
    tape.record(loss, [new_lp, loss, dloss]() {
      const T g = loss.grad()[0];
      auto gx = new_lp.ensure_grad();
      for (std::size_t t = 0; t < dloss.size(); ++t) gx[t] += g * static_cast<T>(dloss[t]);
    });
  }
  return {loss, st};
}

/// Flattens groups into aligned per-token tables in replay order. Each
/// rollout's tokens share its advantage and weigh 1/|y_i|, then rollouts and
/// groups are averaged uniformly.
template <std::floating_point T>
TokenTable token_table(std::span<const Group<T>> groups) {
  TokenTable tt;
  const double n_groups = static_cast<double>(groups.size());
  for (const auto& g : groups) {
    require(g.advantages.size() == g.records.size(), ErrorKind::kContract,
            "token_table: advantages missing");
    const double G = static_cast<double>(g.records.size());
    for (std::size_t i = 0; i < g.records.size(); ++i) {
      const auto& r = g.records[i];
      require(r.ref_logprobs.size() == r.length(), ErrorKind::kContract,
              "token_table: reference log-probs missing");
      if (r.length() == 0) continue;
      const double wt = 1.0 / (static_cast<double>(r.length()) * G * n_groups);
      for (std::size_t t = 0; t < r.length(); ++t) {
        tt.old_logprobs.push_back(r.old_logprobs[t]);
        tt.ref_logprobs.push_back(r.ref_logprobs[t]);
        tt.advantages.push_back(g.advantages[i]);
        tt.weights.push_back(wt);
      }
    }
  }
  return tt;
}

template <std::floating_point T>
std::vector<ReplayItem<T>> replay_items(std::span<const Group<T>> groups) {
  std::vector<ReplayItem<T>> items;
  for (const auto& g : groups) {
    for (const auto& r : g.records) items.push_back({&g.prompt, &r});
  }
  return items;
}

/// Fills ref_logprobs of every record with a no-grad replay under `ref`.
template <std::floating_point T>
void fill_reference_logprobs(const ModelWeights<T>& ref, std::span<Group<T>> groups,
                             double temperature) {
  Tape<T> off(false);
  const auto items = replay_items(std::span<const Group<T>>(groups));
  const auto lp = replay_logprobs(off, ref, items, temperature);
  std::size_t k = 0;
  for (auto& g : groups) {
    for (auto& r : g.records) {
      r.ref_logprobs.assign(lp.data().begin() + static_cast<std::ptrdiff_t>(k),
                            lp.data().begin() + static_cast<std::ptrdiff_t>(k + r.length()));
      k += r.length();
    }
  }
}

/// Full GRPO objective over a batch of groups for the current weights.
template <std::floating_point T>
GrpoLoss<T> grpo_batch_loss(Tape<T>& tape, const ModelWeights<T>& w,
                            std::span<const Group<T>> groups, const RLConfig& cfg) {
  const auto lp = replay_logprobs(tape, w, replay_items(groups), cfg.temperature);
  return grpo_loss(tape, lp, token_table(groups), cfg.clip_eps, cfg.beta);
}

}  // namespace lvr
