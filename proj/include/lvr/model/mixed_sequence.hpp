#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lvr/error.hpp"
#include "lvr/model/vocab.hpp"

namespace lvr {

enum class ElementKind { kText, kVisual, kLatent };

template <std::floating_point T>
struct MixedElement {
  ElementKind kind = ElementKind::kText;
  int token = -1;         // kText
  std::vector<T> vector;  // kVisual / kLatent

  std::optional<int> text_target;
  std::optional<std::vector<T>> latent_target;
  // When set, the latent target is the model's own end anchor rather than a
  // fixed vector (latent_target stays empty).
  bool latent_target_is_anchor = false;
  // Input slot whose vector is the current end anchor; the trainer fills it.
  bool input_is_anchor = false;
  std::optional<int> switch_target;

  static MixedElement text(int id) {
    MixedElement e;
    e.kind = ElementKind::kText;
    e.token = id;
    return e;
  }
  static MixedElement visual(std::vector<T> v) {
    MixedElement e;
    e.kind = ElementKind::kVisual;
    e.vector = std::move(v);
    return e;
  }
  static MixedElement latent(std::vector<T> v) {
    MixedElement e;
    e.kind = ElementKind::kLatent;
    e.vector = std::move(v);
    return e;
  }

  bool is_text(int id) const noexcept { return kind == ElementKind::kText && token == id; }
  bool has_latent_target() const noexcept {
    return latent_target.has_value() || latent_target_is_anchor;
  }
};

template <std::floating_point T>
struct MixedSequence {
  std::vector<MixedElement<T>> elements;

  std::size_t size() const noexcept { return elements.size(); }
  MixedElement<T>& operator[](std::size_t i) { return elements[i]; }
  const MixedElement<T>& operator[](std::size_t i) const { return elements[i]; }
  MixedElement<T>& push(MixedElement<T> e) {
    elements.push_back(std::move(e));
    return elements.back();
  }

  /// Checks element payloads and target placement. Latent targets may only
  /// sit on the <|lvr_start|> token itself or on elements after it and before
  /// the matching <|lvr_end|>.
  void validate(std::size_t d_model, std::size_t max_seq_len, std::size_t vocab_size) const {
    require(elements.size() <= max_seq_len, ErrorKind::kCapacity,
            "sequence length " + std::to_string(elements.size()) + " exceeds max_seq_len " +
                std::to_string(max_seq_len));
    bool in_block = false;
    for (std::size_t i = 0; i < elements.size(); ++i) {
      const auto& e = elements[i];
      const std::string at = " at position " + std::to_string(i);
      if (e.kind == ElementKind::kText) {
        require(e.token >= 0 && static_cast<std::size_t>(e.token) < vocab_size,
                ErrorKind::kContract, "token id out of range" + at);
      } else {
        require(e.vector.size() == d_model, ErrorKind::kDimension,
                "embedding width " + std::to_string(e.vector.size()) + at);
      }
      if (e.text_target) {
        require(*e.text_target >= 0 && static_cast<std::size_t>(*e.text_target) < vocab_size,
                ErrorKind::kContract, "text target out of range" + at);
      }
      if (e.latent_target) {
        require(e.latent_target->size() == d_model, ErrorKind::kDimension,
                "latent target width" + at);
      }
      if (e.is_text(Vocab::kLvrStart)) in_block = true;
      if (e.is_text(Vocab::kLvrEnd)) in_block = false;
      if (e.has_latent_target()) {
        require(in_block, ErrorKind::kContract, "latent target outside a latent block" + at);
      }
    }
  }
};

}  // namespace lvr
