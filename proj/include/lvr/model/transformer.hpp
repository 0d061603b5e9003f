#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "lvr/model/mixed_sequence.hpp"
#include "lvr/model/weights.hpp"
#include "lvr/numerics/ops.hpp"

namespace lvr {

template <std::floating_point T>
struct ForwardOutput {
  Tensor<T> hidden;  // final residual stream [L x d], before the final LayerNorm
  Tensor<T> logits;  // [L x vocab]
};

/// Row-level description of a packed forward pass. Row i is taken from
/// sources[picks[i].source]; source 0 is always the token embedding table.
/// Positions restart at 0 for each packed sequence and attention never
/// crosses sequence boundaries.
template <std::floating_point T>
struct InputRows {
  std::vector<Tensor<T>> sources;
  std::vector<ops::RowPick> picks;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> segment_start;
  std::vector<std::size_t> sequence_offset;  // first row of each sequence, plus the total

  std::size_t size() const noexcept { return picks.size(); }
};

/// Text elements read the embedding table; visual and latent elements are
/// copied into one constant matrix (source 1).
template <std::floating_point T>
InputRows<T> build_inputs(const ModelWeights<T>& w,
                          const std::vector<const MixedSequence<T>*>& seqs) {
  const std::size_t d = w.config.d();
  const auto max_len = static_cast<std::size_t>(w.config.max_seq_len);
  InputRows<T> in;
  in.sources.push_back(w.token_embedding);
  std::vector<T> constants;
  std::size_t n_const = 0;
  in.sequence_offset.push_back(0);
  for (const auto* seq : seqs) {
    require(seq->size() <= max_len, ErrorKind::kCapacity,
            "sequence length " + std::to_string(seq->size()) + " exceeds max_seq_len " +
                std::to_string(max_len));
    const std::size_t start = in.picks.size();
    for (std::size_t i = 0; i < seq->size(); ++i) {
      const auto& e = (*seq)[i];
      if (e.kind == ElementKind::kText) {
        require(e.token >= 0 && e.token < w.config.vocab_size, ErrorKind::kContract,
                "token id " + std::to_string(e.token) + " out of range");
        in.picks.push_back({0, static_cast<std::size_t>(e.token)});
      } else {
        require(e.vector.size() == d, ErrorKind::kDimension, "input vector width mismatch");
        constants.insert(constants.end(), e.vector.begin(), e.vector.end());
        in.picks.push_back({1, n_const++});
      }
      in.positions.push_back(i);
      in.segment_start.push_back(start);
    }
    in.sequence_offset.push_back(in.picks.size());
  }
  // Always present so that callers can rely on source numbering.
  if (n_const == 0) {
    constants.assign(d, T{0});
    n_const = 1;
  }
  in.sources.push_back(Tensor<T>(Shape{n_const, d}, std::move(constants)));
  return in;
}

namespace detail {

template <std::floating_point T>
Tensor<T> mlp_block(Tape<T>& tape, const LayerWeights<T>& L, const Tensor<T>& x) {
  auto a = ops::layer_norm(tape, x, L.ln2_gamma, L.ln2_beta);
  auto f = ops::linear(tape, ops::gelu(tape, ops::linear(tape, a, L.w_fc, L.b_fc)), L.w_proj,
                       L.b_proj);
  return ops::add(tape, x, f);
}

template <std::floating_point T>
Tensor<T> logits_from_hidden(Tape<T>& tape, const ModelWeights<T>& w, const Tensor<T>& hidden) {
  return ops::matmul(tape, ops::layer_norm(tape, hidden, w.lnf_gamma, w.lnf_beta), w.lm_head);
}

}  // namespace detail

template <std::floating_point T>
ForwardOutput<T> forward_rows(Tape<T>& tape, const ModelWeights<T>& w, const InputRows<T>& in) {
  require(in.size() > 0, ErrorKind::kContract, "forward over an empty sequence");
  for (std::size_t p : in.positions) {
    require(p < static_cast<std::size_t>(w.config.max_seq_len), ErrorKind::kCapacity,
            "position " + std::to_string(p) + " exceeds max_seq_len");
  }
  auto x = ops::stack_rows(tape, in.sources, in.picks);
  x = ops::add(tape, x, ops::gather_rows(tape, w.position_embedding, in.positions));
  const auto heads = static_cast<std::size_t>(w.config.n_heads);
  for (const auto& L : w.layers) {
    auto a = ops::layer_norm(tape, x, L.ln1_gamma, L.ln1_beta);
    auto q = ops::linear(tape, a, L.wq, L.bq);
    auto k = ops::matmul(tape, a, L.wk);
    auto v = ops::linear(tape, a, L.wv, L.bv);
    auto att = ops::causal_attention(tape, q, k, v, heads, in.segment_start);
    x = ops::add(tape, x, ops::linear(tape, att, L.wo, L.bo));
    x = detail::mlp_block(tape, L, x);
  }
  return {x, detail::logits_from_hidden(tape, w, x)};
}

template <std::floating_point T>
ForwardOutput<T> forward_mixed(Tape<T>& tape, const ModelWeights<T>& w,
                               const MixedSequence<T>& seq) {
  return forward_rows(tape, w, build_inputs(w, {&seq}));
}

template <std::floating_point T>
Tensor<T> apply_lvr_head(Tape<T>& tape, const ModelWeights<T>& w, const Tensor<T>& h) {
  const auto& H = w.head;
  switch (w.config.lvr_head_kind) {
    case LvrHeadKind::kIdentity:
      return h;
    case LvrHeadKind::kMlp2:
      return ops::linear(tape, ops::gelu(tape, ops::linear(tape, h, H.w1, H.b1)), H.w2, H.b2);
    case LvrHeadKind::kGlu3x: {
      auto up = ops::linear(tape, h, H.w_up, H.b_up);
      auto gate = ops::sigmoid(tape, ops::linear(tape, h, H.w_gate, H.b_gate));
      return ops::linear(tape, ops::mul(tape, up, gate), H.w_down, H.b_down);
    }
  }
  return h;
}

/// Single-vector convenience: head applied to one hidden row.
template <std::floating_point T>
std::vector<T> apply_lvr_head(const ModelWeights<T>& w, std::span<const T> h) {
  Tape<T> off(false);
  Tensor<T> row(Shape{1, h.size()}, std::vector<T>(h.begin(), h.end()));
  auto out = apply_lvr_head(off, w, row);
  return std::vector<T>(out.data().begin(), out.data().end());
}

/// Per-layer keys and values of one sequence, grown as positions are fed.
template <std::floating_point T>
class KVCache {
 public:
  explicit KVCache(const ModelConfig& c)
      : d_(c.d()), max_len_(static_cast<std::size_t>(c.max_seq_len)),
        keys_(static_cast<std::size_t>(c.n_layers)),
        values_(static_cast<std::size_t>(c.n_layers)) {}

  std::size_t length() const noexcept { return length_; }
  std::size_t capacity() const noexcept { return max_len_; }
  void clear() {
    length_ = 0;
    for (auto& k : keys_) k.clear();
    for (auto& v : values_) v.clear();
  }

  std::vector<T>& keys(std::size_t layer) { return keys_[layer]; }
  std::vector<T>& values(std::size_t layer) { return values_[layer]; }
  void advance(std::size_t n) { length_ += n; }

 private:
  std::size_t d_;
  std::size_t max_len_;
  std::size_t length_ = 0;
  std::vector<std::vector<T>> keys_;
  std::vector<std::vector<T>> values_;
};

/// Feeds new elements after the cached prefix and returns their outputs.
/// Uses the same row kernels as forward_rows, so each row matches the
/// corresponding row of a full pass over the whole sequence.
template <std::floating_point T>
ForwardOutput<T> forward_incremental(const ModelWeights<T>& w, KVCache<T>& cache,
                                     std::span<const MixedElement<T>> elements) {
  const std::size_t d = w.config.d(), m = elements.size(), past = cache.length();
  require(m > 0, ErrorKind::kContract, "incremental forward with no elements");
  require(past + m <= cache.capacity(), ErrorKind::kCapacity,
          "sequence length " + std::to_string(past + m) + " exceeds max_seq_len " +
              std::to_string(cache.capacity()));
  Tape<T> off(false);
  std::vector<T> rows;
  rows.reserve(m * d);
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& e = elements[i];
    if (e.kind == ElementKind::kText) {
      require(e.token >= 0 && e.token < w.config.vocab_size, ErrorKind::kContract,
              "token id " + std::to_string(e.token) + " out of range");
      const auto r = w.token_embedding.row(static_cast<std::size_t>(e.token));
      rows.insert(rows.end(), r.begin(), r.end());
    } else {
      require(e.vector.size() == d, ErrorKind::kDimension, "input vector width mismatch");
      rows.insert(rows.end(), e.vector.begin(), e.vector.end());
    }
    positions.push_back(past + i);
  }
  Tensor<T> x(Shape{m, d}, std::move(rows));
  x = ops::add(off, x, ops::gather_rows(off, w.position_embedding, positions));

  const auto heads = static_cast<std::size_t>(w.config.n_heads);
  const std::size_t hd = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<T> probs(past + m);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    auto a = ops::layer_norm(off, x, L.ln1_gamma, L.ln1_beta);
    auto q = ops::linear(off, a, L.wq, L.bq);
    auto k = ops::matmul(off, a, L.wk);
    auto v = ops::linear(off, a, L.wv, L.bv);
    auto& K = cache.keys(l);
    auto& V = cache.values(l);
    K.insert(K.end(), k.data().begin(), k.data().end());
    V.insert(V.end(), v.data().begin(), v.data().end());
    Tensor<T> att(Shape{m, d});
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < m; ++i) {
        kernels::attend_row(q.data().data() + i * d, K.data(), V.data(), d, 0, past + i,
                            h * hd, hd, scale, att.data().data() + i * d, probs.data());
      }
    }
    x = ops::add(off, x, ops::linear(off, att, L.wo, L.bo));
    x = detail::mlp_block(off, L, x);
  }
  cache.advance(m);
  return {x, detail::logits_from_hidden(off, w, x)};
}

template <std::floating_point T>
ForwardOutput<T> forward_incremental(const ModelWeights<T>& w, KVCache<T>& cache,
                                     const MixedElement<T>& element) {
  return forward_incremental(w, cache, std::span<const MixedElement<T>>(&element, 1));
}

}  // namespace lvr
