#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "lvr/data/bbox.hpp"
#include "lvr/data/dataset.hpp"
#include "lvr/log.hpp"
#include "lvr/model/mixed_sequence.hpp"
#include "lvr/numerics/tensor.hpp"

namespace lvr {

struct AssembleOptions {
  // false drops the latent block entirely: [BOS, V, Q, A, EOS].
  bool latent_block = true;
  // Appends one latent step supervised toward the end anchor (see below).
  bool latent_end = false;
  int patch_size = 28;
};

template <std::floating_point T>
std::vector<T> row_vector(const Tensor<T>& t, std::size_t r) {
  const auto row = t.row(r);
  return std::vector<T>(row.begin(), row.end());
}

/// [BOS, visual tokens in grid order, question tokens].
template <std::floating_point T>
MixedSequence<T> assemble_prompt(const SFTInstance& inst, const Tensor<T>& visual_tokens) {
  MixedSequence<T> s;
  s.push(MixedElement<T>::text(Vocab::kBos));
  for (std::size_t i = 0; i < visual_tokens.rows(); ++i) {
    s.push(MixedElement<T>::visual(row_vector(visual_tokens, i)));
  }
  for (int q : inst.question) s.push(MixedElement<T>::text(q));
  return s;
}

/// Full supervised layout
///   [BOS, V, Q, <|lvr_start|>, v_1..v_T, <|lvr_end|>, A, EOS]
/// where v_t are the visual tokens at the ROI patches. Targets:
///   last question token -> <|lvr_start|>
///   <|lvr_start|>       -> latent v_1          (switch 0)
///   v_t, t < T          -> latent v_{t+1}      (switch 0)
///   v_T                 -> <|lvr_end|>         (switch 1)
///   <|lvr_end|>, A      -> next answer token, then EOS
/// With latent_end, v_T instead targets the end anchor and one more latent
/// input (a copy of the anchor, filled in by the trainer) targets <|lvr_end|>.
template <std::floating_point T>
MixedSequence<T> assemble_sft_sequence(const SFTInstance& inst, const Tensor<T>& visual_tokens,
                                       const AssembleOptions& opt, std::size_t max_seq_len) {
  require(!inst.question.empty() && !inst.answer.empty(), ErrorKind::kContract,
          "instance " + inst.id + " has an empty question or answer");
  auto s = assemble_prompt(inst, visual_tokens);
  const std::size_t d = visual_tokens.cols();
  auto text = [&](int id) -> MixedElement<T>& { return s.push(MixedElement<T>::text(id)); };

  if (opt.latent_block) {
    const auto idx = bbox_to_patch_indices(inst.bbox, inst.height, inst.width, opt.patch_size);
    s.elements.back().text_target = Vocab::kLvrStart;
    auto& start = text(Vocab::kLvrStart);
    start.latent_target = row_vector(visual_tokens, idx[0]);
    start.switch_target = 0;
    for (std::size_t t = 0; t < idx.size(); ++t) {
      auto& e = s.push(MixedElement<T>::latent(row_vector(visual_tokens, idx[t])));
      const bool last = t + 1 == idx.size();
      e.switch_target = last ? 1 : 0;
      if (!last) {
        e.latent_target = row_vector(visual_tokens, idx[t + 1]);
      } else if (opt.latent_end) {
        e.latent_target_is_anchor = true;
      } else {
        e.text_target = Vocab::kLvrEnd;
      }
    }
    if (opt.latent_end) {
      auto& anchor = s.push(MixedElement<T>::latent(std::vector<T>(d, T{0})));
      anchor.input_is_anchor = true;
      anchor.text_target = Vocab::kLvrEnd;
    }
    text(Vocab::kLvrEnd).text_target = inst.answer[0];
  } else {
    s.elements.back().text_target = inst.answer[0];
  }
  for (std::size_t i = 0; i < inst.answer.size(); ++i) {
    text(inst.answer[i]).text_target =
        i + 1 < inst.answer.size() ? inst.answer[i + 1] : Vocab::kEos;
  }
  text(Vocab::kEos);
  require(s.size() <= max_seq_len, ErrorKind::kCapacity,
          "instance " + inst.id + " assembles to " + std::to_string(s.size()) +
              " elements, above max_seq_len " + std::to_string(max_seq_len));
  return s;
}

/// Assembles every instance, skipping (with a warning) those that do not fit.
template <std::floating_point T>
std::vector<MixedSequence<T>> assemble_all(std::span<const SFTInstance> instances,
                                           std::span<const Tensor<T>> visual_tokens,
                                           const AssembleOptions& opt, std::size_t max_seq_len,
                                           std::vector<std::size_t>* kept = nullptr) {
  std::vector<MixedSequence<T>> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    try {
      out.push_back(assemble_sft_sequence(instances[i], visual_tokens[i], opt, max_seq_len));
      if (kept) kept->push_back(i);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kCapacity) throw;
      warn(std::string("skipping instance: ") + e.what());
    }
  }
  return out;
}

/// One pack of sequence indices whose lengths sum to at most L_max.
struct PackedBatch {
  std::vector<std::size_t> members;
  std::size_t total_length = 0;
};

/// Greedy first-fit-decreasing. Ties in length keep input order.
inline std::vector<PackedBatch> pack_batches(std::span<const std::size_t> lengths,
                                             std::size_t max_len) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
  std::vector<PackedBatch> out;
  for (std::size_t i : order) {
    require(lengths[i] <= max_len, ErrorKind::kCapacity,
            "sequence of length " + std::to_string(lengths[i]) + " exceeds pack limit " +
                std::to_string(max_len));
    auto it = std::find_if(out.begin(), out.end(), [&](const PackedBatch& b) {
      return b.total_length + lengths[i] <= max_len;
    });
    if (it == out.end()) {
      out.emplace_back();
      it = std::prev(out.end());
    }
    it->members.push_back(i);
    it->total_length += lengths[i];
  }
  return out;
}

template <std::floating_point T>
std::vector<PackedBatch> pack_sequences(std::span<const MixedSequence<T>> seqs,
                                        std::size_t max_len) {
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) lengths.push_back(s.size());
  return pack_batches(lengths, max_len);
}

}  // namespace lvr
