#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lvr/decode/config.hpp"
#include "lvr/log.hpp"
#include "lvr/model/transformer.hpp"

namespace lvr {

inline bool stop_fixed(int steps_taken, int k) { return steps_taken == k; }

/// Cosine: similarity >= threshold. L1/L2: distance <= threshold.
template <std::floating_point T>
bool stop_latent_end(std::span<const T> h, std::span<const T> anchor, DistanceMetric metric,
                     double threshold) {
  require(h.size() == anchor.size(), ErrorKind::kDimension, "stop_latent_end: width mismatch");
  double dot = 0, hh = 0, aa = 0, l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = h[i], y = anchor[i];
    dot += x * y;
    hh += x * x;
    aa += y * y;
    l1 += std::abs(x - y);
    l2 += (x - y) * (x - y);
  }
  switch (metric) {
    case DistanceMetric::kCosine:
      if (hh == 0 || aa == 0) {
        warn("stop_latent_end: zero-norm vector under cosine metric");
        return false;
      }
      return dot / std::sqrt(hh * aa) >= threshold;
    case DistanceMetric::kL1:
      return l1 <= threshold;
    case DistanceMetric::kL2:
      return std::sqrt(l2) <= threshold;
  }
  return false;
}

/// Index of the largest entry; ties go to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <std::floating_point T>
bool stop_mode_switch(std::span<const T> logits) {
  return argmax(logits) == static_cast<std::size_t>(Vocab::kLvrEnd);
}

/// log_softmax(logits / temperature), evaluated exactly as the replay pass does.
template <std::floating_point T>
std::vector<T> tempered_logprobs(std::span<const T> logits, double temperature) {
  const T inv = T{1} / static_cast<T>(temperature);
  std::vector<T> scaled(logits.size()), out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] * inv;
  kernels::log_softmax_row(scaled.data(), out.data(), scaled.size());
  return out;
}

template <std::floating_point T>
struct LatentSegment {
  std::size_t start_index = 0;  // response index of the <|lvr_start|> token
  std::size_t steps = 0;        // latent inputs that follow it
  std::string stop_reason;      // fixed | anchor | predicted | cap | max_seq_len
};

/// Everything emitted after the prompt, in input order. Text tokens carry the
/// log-probability they had when chosen; `sampled` is false for tokens the
/// decoder inserted itself (a forced <|lvr_end|>).
template <std::floating_point T>
struct DecodeTrace {
  std::size_t prompt_length = 0;
  std::vector<MixedElement<T>> response;
  std::vector<double> logprobs;  // per response element, 0 for latent inputs
  std::vector<bool> sampled;
  std::vector<LatentSegment<T>> segments;
  std::string stop_reason;  // eos | max_new_tokens | max_seq_len

  std::vector<int> tokens() const {
    std::vector<int> out;
    for (const auto& e : response) {
      if (e.kind == ElementKind::kText) out.push_back(e.token);
    }
    return out;
  }

  std::size_t latent_steps() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.steps;
    return n;
  }

  std::size_t position(std::size_t response_index) const {
    return prompt_length + response_index;
  }
};

enum class DecodeBackend { kCached, kFullRecompute };

namespace detail {

// Feeds inputs one call at a time and returns the last row's outputs.
template <std::floating_point T>
class DecodeStepper {
 public:
  DecodeStepper(const ModelWeights<T>& w, DecodeBackend backend)
      : w_(w), backend_(backend), cache_(w.config) {}

  std::size_t length() const noexcept { return length_; }

  void feed(std::span<const MixedElement<T>> elems) {
    if (backend_ == DecodeBackend::kCached) {
      auto out = forward_incremental(w_, cache_, elems);
      take_last(out);
    } else {
      for (const auto& e : elems) seq_.push(e);
      Tape<T> off(false);
      auto out = forward_mixed(off, w_, seq_);
      take_last(out);
    }
    length_ += elems.size();
  }
  void feed(const MixedElement<T>& e) { feed(std::span<const MixedElement<T>>(&e, 1)); }

  const std::vector<T>& hidden() const noexcept { return hidden_; }
  const std::vector<T>& logits() const noexcept { return logits_; }

 private:
  void take_last(const ForwardOutput<T>& out) {
    const auto h = out.hidden.row(out.hidden.rows() - 1);
    const auto l = out.logits.row(out.logits.rows() - 1);
    hidden_.assign(h.begin(), h.end());
    logits_.assign(l.begin(), l.end());
  }

  const ModelWeights<T>& w_;
  DecodeBackend backend_;
  KVCache<T> cache_;
  MixedSequence<T> seq_;
  std::size_t length_ = 0;
  std::vector<T> hidden_;
  std::vector<T> logits_;
};

}  // namespace detail

/// Interleaved decoding. Text tokens are sampled at `temperature` (or taken
/// greedily); <|lvr_start|> switches to latent mode, where each step feeds the
/// LVR-head output of the current hidden state back as the next input until
/// the strategy's stop rule fires. The cap check follows the strategy check,
/// so a strategy may stop at step 0. Under LatentEnd the vector that triggered
/// the stop is fed once more (mirroring the training layout) before
/// <|lvr_end|> is inserted.
template <std::floating_point T>
DecodeTrace<T> generate(const ModelWeights<T>& w, const MixedSequence<T>& prompt,
                        const DecodeConfig& cfg, std::uint64_t seed,
                        DecodeBackend backend = DecodeBackend::kCached,
                        int fixed_steps_override = 0) {
  cfg.validate();
  require(prompt.size() > 0, ErrorKind::kContract, "generate: empty prompt");
  const std::size_t max_len = static_cast<std::size_t>(w.config.max_seq_len);
  const int fixed_k = fixed_steps_override > 0 ? fixed_steps_override : cfg.fixed_steps;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DecodeTrace<T> trace;
  trace.prompt_length = prompt.size();
  detail::DecodeStepper<T> step(w, backend);
  step.feed(std::span<const MixedElement<T>>(prompt.elements));

  auto emit = [&](int token, double lp, bool sampled) {
    trace.response.push_back(MixedElement<T>::text(token));
    trace.logprobs.push_back(lp);
    trace.sampled.push_back(sampled);
  };
  auto room = [&]() { return step.length() < max_len; };

  int emitted = 0;
  while (true) {
    if (emitted >= cfg.max_new_tokens) {
      trace.stop_reason = "max_new_tokens";
      break;
    }
    // The next token would sit at position step.length().
    if (!room()) {
      trace.stop_reason = "max_seq_len";
      break;
    }
    const auto lp = tempered_logprobs<T>(step.logits(), cfg.temperature);
    int token;
    if (cfg.greedy) {
      token = static_cast<int>(argmax(std::span<const T>(step.logits())));
    } else {
      const double u = unit(rng);
      double acc = 0;
      token = static_cast<int>(lp.size()) - 1;
      for (std::size_t j = 0; j < lp.size(); ++j) {
        acc += std::exp(static_cast<double>(lp[j]));
        if (u < acc) {
          token = static_cast<int>(j);
          break;
        }
      }
    }
    emit(token, static_cast<double>(lp[static_cast<std::size_t>(token)]), true);
    ++emitted;
    if (token == Vocab::kEos) {
      trace.stop_reason = "eos";
      break;
    }
    // A latent block needs a slot for its closing <|lvr_end|>.
    if (token == Vocab::kLvrStart && step.length() + 1 >= max_len) {
      trace.stop_reason = "max_seq_len";
      break;
    }
    step.feed(trace.response.back());
    if (token != Vocab::kLvrStart) continue;

    LatentSegment<T> seg;
    seg.start_index = trace.response.size() - 1;
    int steps = 0;
    while (true) {
      // One slot is kept free for the closing <|lvr_end|>.
      if (step.length() + 1 >= max_len) {
        seg.stop_reason = "max_seq_len";
        break;
      }
      auto fed = apply_lvr_head<T>(w, step.hidden());
      bool stop = false;
      switch (cfg.strategy) {
        case StopStrategy::kFixedToken:
          stop = stop_fixed(steps, fixed_k);
          if (stop) seg.stop_reason = "fixed";
          break;
        case StopStrategy::kLatentEnd:
          stop = stop_latent_end<T>(fed, w.latent_end_anchor.row(0), cfg.latent_end_metric,
                                    cfg.latent_end_threshold);
          if (stop) seg.stop_reason = "anchor";
          break;
        case StopStrategy::kModeSwitch:
          stop = stop_mode_switch<T>(step.logits());
          if (stop) seg.stop_reason = "predicted";
          break;
      }
      if (!stop && steps >= cfg.max_latent_steps) {
        stop = true;
        seg.stop_reason = "cap";
      }
      if (stop && seg.stop_reason == "anchor") {
        trace.response.push_back(MixedElement<T>::latent(std::move(fed)));
        trace.logprobs.push_back(0.0);
        trace.sampled.push_back(false);
        step.feed(trace.response.back());
        ++steps;
      }
      if (stop) break;
      trace.response.push_back(MixedElement<T>::latent(std::move(fed)));
      trace.logprobs.push_back(0.0);
      trace.sampled.push_back(false);
      step.feed(trace.response.back());
      ++steps;
    }
    seg.steps = static_cast<std::size_t>(steps);
    const auto end_lp = tempered_logprobs<T>(step.logits(), cfg.temperature);
    emit(Vocab::kLvrEnd, static_cast<double>(end_lp[Vocab::kLvrEnd]), false);
    ++emitted;
    trace.segments.push_back(seg);
    step.feed(trace.response.back());
  }
  return trace;
}

template <std::floating_point T>
DecodeTrace<T> generate(const ModelWeights<T>& w, const MixedSequence<T>& prompt,
                        const DecodeConfig& cfg) {
  return generate(w, prompt, cfg, cfg.seed);
}

/// Tokens after the last <|lvr_end|> (or the whole response if there is
/// none), up to but excluding EOS.
inline std::vector<int> extract_answer(const std::vector<int>& tokens) {
  std::size_t begin = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocab::kLvrEnd) begin = i + 1;
  }
  std::vector<int> out;
  for (std::size_t i = begin; i < tokens.size() && tokens[i] != Vocab::kEos; ++i) {
    out.push_back(tokens[i]);
  }
  return out;
}

/// 1 iff <|lvr_start|> occurs and some <|lvr_end|> follows it.
inline bool has_latent_format(const std::vector<int>& tokens) {
  bool started = false;
  for (int t : tokens) {
    if (t == Vocab::kLvrStart) started = true;
    if (t == Vocab::kLvrEnd && started) return true;
  }
  return false;
}

/// Human-readable trace: one JSON object with token ids and strings, segment
/// stop reasons, and (optionally) the latent vectors.
template <std::floating_point T>
Json trace_to_json(const DecodeTrace<T>& trace, const Vocab& vocab, bool include_latents) {
  Json j;
  j["prompt_length"] = trace.prompt_length;
  j["stop_reason"] = trace.stop_reason;
  Json steps = Json::array();
  for (std::size_t i = 0; i < trace.response.size(); ++i) {
    const auto& e = trace.response[i];
    Json s;
    s["position"] = trace.position(i);
    if (e.kind == ElementKind::kText) {
      s["token"] = e.token;
      s["text"] = vocab.display(e.token);
      s["logprob"] = trace.logprobs[i];
      s["sampled"] = static_cast<bool>(trace.sampled[i]);
    } else {
      s["latent"] = true;
      if (include_latents) {
        std::vector<double> v(e.vector.begin(), e.vector.end());
        s["vector"] = v;
      }
    }
    steps.push_back(s);
  }
  j["response"] = steps;
  Json segs = Json::array();
  for (const auto& s : trace.segments) {
    segs.push_back({{"start_index", s.start_index}, {"steps", s.steps}, {"stop_reason", s.stop_reason}});
  }
  j["segments"] = segs;
  j["text"] = vocab.decode(trace.tokens());
  return j;
}

}  // namespace lvr
