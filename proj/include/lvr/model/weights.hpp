#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lvr/model/config.hpp"
#include "lvr/model/vision.hpp"
#include "lvr/numerics/tensor.hpp"

namespace lvr {

template <std::floating_point T>
struct LayerWeights {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;  // no key bias: softmax is blind to it
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w_fc, b_fc, w_proj, b_proj;
};

/// Optional transformation applied to hidden states before they are compared
/// with latent targets or fed back as latent inputs.
///   mlp2:  w2 * gelu(w1 * h + b1) + b2
///   glu3x: w_down * ((w_up * h + b_up) .* sigmoid(w_gate * h + b_gate)) + b_down
template <std::floating_point T>
struct LvrHeadWeights {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> w_up, b_up, w_gate, b_gate, w_down, b_down;
};

template <std::floating_point T>
class ModelWeights {
 public:
  ModelConfig config;
  Tensor<T> token_embedding;     // [vocab x d]
  Tensor<T> position_embedding;  // [max_seq_len x d]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> lnf_gamma, lnf_beta;
  Tensor<T> lm_head;             // [d x vocab]
  LvrHeadWeights<T> head;
  Tensor<T> latent_end_anchor;   // [1 x d]
  FrozenVisionEncoder<T> vision;

  /// Zero-filled tensors of the right shapes; the vision encoder is derived
  /// from vision_seed.
  static ModelWeights allocate(const ModelConfig& c, std::uint64_t vision_seed) {
    c.validate();
    ModelWeights w;
    w.config = c;
    const std::size_t d = c.d(), v = static_cast<std::size_t>(c.vocab_size);
    auto mat = [](std::size_t r, std::size_t k) { return Tensor<T>(Shape{r, k}, true); };
    auto vec = [](std::size_t n) { return Tensor<T>(Shape{n}, true); };
    w.token_embedding = mat(v, d);
    w.position_embedding = mat(static_cast<std::size_t>(c.max_seq_len), d);
    for (int l = 0; l < c.n_layers; ++l) {
      LayerWeights<T> L{vec(d),    vec(d),    mat(d, d),     vec(d),     mat(d, d),
                        mat(d, d), vec(d),    mat(d, d),     vec(d),     vec(d),
                        vec(d),    mat(d, 4 * d), vec(4 * d), mat(4 * d, d), vec(d)};
      w.layers.push_back(std::move(L));
    }
    w.lnf_gamma = vec(d);
    w.lnf_beta = vec(d);
    w.lm_head = mat(d, v);
    if (c.lvr_head_kind == LvrHeadKind::kMlp2) {
      w.head.w1 = mat(d, d);
      w.head.b1 = vec(d);
      w.head.w2 = mat(d, d);
      w.head.b2 = vec(d);
    } else if (c.lvr_head_kind == LvrHeadKind::kGlu3x) {
      w.head.w_up = mat(d, 3 * d);
      w.head.b_up = vec(3 * d);
      w.head.w_gate = mat(d, 3 * d);
      w.head.b_gate = vec(3 * d);
      w.head.w_down = mat(3 * d, d);
      w.head.b_down = vec(d);
    }
    w.latent_end_anchor = Tensor<T>(Shape{1, d}, false);
    w.vision = FrozenVisionEncoder<T>(c.patch_size, c.image_channels, c.d_model, vision_seed);
    return w;
  }

  bool anchor_trainable() const noexcept { return latent_end_anchor.requires_grad(); }
  void set_anchor_trainable(bool on) { latent_end_anchor.set_requires_grad(on); }

  /// Every tensor in a fixed order. Handles share storage with the weights.
  std::vector<Parameter<T>> parameters() const {
    std::vector<Parameter<T>> out;
    auto add = [&](std::string name, const Tensor<T>& t, bool trainable = true) {
      out.push_back({std::move(name), t, trainable});
    };
    add("token_embedding", token_embedding);
    add("position_embedding", position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      add(p + "ln1.gamma", L.ln1_gamma);
      add(p + "ln1.beta", L.ln1_beta);
      add(p + "attn.wq", L.wq);
      add(p + "attn.bq", L.bq);
      add(p + "attn.wk", L.wk);
      add(p + "attn.wv", L.wv);
      add(p + "attn.bv", L.bv);
      add(p + "attn.wo", L.wo);
      add(p + "attn.bo", L.bo);
      add(p + "ln2.gamma", L.ln2_gamma);
      add(p + "ln2.beta", L.ln2_beta);
      add(p + "mlp.w_fc", L.w_fc);
      add(p + "mlp.b_fc", L.b_fc);
      add(p + "mlp.w_proj", L.w_proj);
      add(p + "mlp.b_proj", L.b_proj);
    }
    add("lnf.gamma", lnf_gamma);
    add("lnf.beta", lnf_beta);
    add("lm_head", lm_head);
    if (config.lvr_head_kind == LvrHeadKind::kMlp2) {
      add("lvr_head.w1", head.w1);
      add("lvr_head.b1", head.b1);
      add("lvr_head.w2", head.w2);
      add("lvr_head.b2", head.b2);
    } else if (config.lvr_head_kind == LvrHeadKind::kGlu3x) {
      add("lvr_head.w_up", head.w_up);
      add("lvr_head.b_up", head.b_up);
      add("lvr_head.w_gate", head.w_gate);
      add("lvr_head.b_gate", head.b_gate);
      add("lvr_head.w_down", head.w_down);
      add("lvr_head.b_down", head.b_down);
    }
    add("latent_end_anchor", latent_end_anchor, anchor_trainable());
    add("vision.weight", vision.weight(), false);
    add("vision.bias", vision.bias(), false);
    return out;
  }

  std::vector<Parameter<T>> trainable_parameters() const {
    std::vector<Parameter<T>> out;
    for (auto& p : parameters()) {
      if (p.trainable) out.push_back(p);
    }
    return out;
  }

  void zero_grad() const {
    for (auto& p : parameters()) p.tensor.drop_grad();
  }

  /// Deep copy; the copy shares nothing with this object.
  ModelWeights clone() const { return cast<T>(); }

  template <std::floating_point U>
  ModelWeights<U> cast() const {
    auto out = ModelWeights<U>::allocate(config, vision.seed());
    out.set_anchor_trainable(anchor_trainable());
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].tensor.data();
      auto t = Tensor<U>(dst[i].tensor).data();
      for (std::size_t j = 0; j < s.size(); ++j) t[j] = static_cast<U>(s[j]);
    }
    return out;
  }

  void copy_values_from(const ModelWeights& other) {
    auto src = other.parameters();
    auto dst = parameters();
    require(src.size() == dst.size(), ErrorKind::kContract, "weight layouts differ");
    for (std::size_t i = 0; i < src.size(); ++i) {
      require(src[i].tensor.shape() == dst[i].tensor.shape(), ErrorKind::kContract,
              "weight shapes differ for " + src[i].name);
      Tensor<T> target = dst[i].tensor;
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(),
                target.data().begin());
    }
  }
};

/// Scaled-normal initialization: std 0.02, residual output projections
/// scaled by 1/sqrt(2 * n_layers), LayerNorm gains 1, biases 0, and the last
/// layer of a non-identity LVR head zeroed.
template <std::floating_point T>
ModelWeights<T> init_weights(const ModelConfig& config, std::uint64_t seed) {
  auto w = ModelWeights<T>::allocate(config, seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 rng(seed);
  auto normal = [&](Tensor<T> t, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  };
  auto fill = [](Tensor<T> t, T value) {
    for (auto& v : t.data()) v = value;
  };
  const double base = 0.02;
  const double resid = base / std::sqrt(2.0 * config.n_layers);
  normal(w.token_embedding, base);
  normal(w.position_embedding, base);
  for (auto& L : w.layers) {
    fill(L.ln1_gamma, T{1});
    fill(L.ln2_gamma, T{1});
    normal(L.wq, base);
    normal(L.wk, base);
    normal(L.wv, base);
    normal(L.wo, resid);
    normal(L.w_fc, base);
    normal(L.w_proj, resid);
  }
  fill(w.lnf_gamma, T{1});
  normal(w.lm_head, base);
  if (config.lvr_head_kind == LvrHeadKind::kMlp2) {
    normal(w.head.w1, base);
  } else if (config.lvr_head_kind == LvrHeadKind::kGlu3x) {
    normal(w.head.w_up, base);
    normal(w.head.w_gate, base);
  }
  normal(w.latent_end_anchor, 1.0);
  return w;
}

}  // namespace lvr
