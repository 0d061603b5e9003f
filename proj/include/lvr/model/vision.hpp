#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "lvr/error.hpp"
#include "lvr/numerics/kernels.hpp"
#include "lvr/numerics/tensor.hpp"

namespace lvr {

/// Planar float image [C x H x W].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w),
        pixels(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                   static_cast<std::size_t>(w),
               0.0f) {}

  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

inline std::uint64_t fnv1a(const void* bytes, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Patch (r, c) is flattened in row-major pixel order with channels
/// interleaved per pixel: element (dy * P + dx) * C + ch.
inline std::vector<float> flatten_patch(const Image& image, int patch_size, int r, int c) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(patch_size * patch_size * image.channels));
  for (int dy = 0; dy < patch_size; ++dy) {
    for (int dx = 0; dx < patch_size; ++dx) {
      for (int ch = 0; ch < image.channels; ++ch) {
        out.push_back(image.at(ch, r * patch_size + dy, c * patch_size + dx));
      }
    }
  }
  return out;
}

/// Fixed random linear patch embedding. Never trained.
template <std::floating_point T>
class FrozenVisionEncoder {
 public:
  FrozenVisionEncoder() = default;

  FrozenVisionEncoder(int patch_size, int channels, int d_model, std::uint64_t seed)
      : patch_size_(patch_size), channels_(channels), seed_(seed),
        weight_(Shape{static_cast<std::size_t>(patch_size * patch_size * channels),
                      static_cast<std::size_t>(d_model)}),
        bias_(Shape{static_cast<std::size_t>(d_model)}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> w_dist(
        0.0, 1.0 / std::sqrt(static_cast<double>(weight_.rows())));
    std::normal_distribution<double> b_dist(0.0, 0.02);
    for (auto& v : weight_.data()) v = static_cast<T>(w_dist(rng));
    for (auto& v : bias_.data()) v = static_cast<T>(b_dist(rng));
  }

  FrozenVisionEncoder(int patch_size, int channels, std::uint64_t seed, Tensor<T> weight,
                      Tensor<T> bias)
      : patch_size_(patch_size), channels_(channels), seed_(seed),
        weight_(std::move(weight)), bias_(std::move(bias)) {}

  int patch_size() const noexcept { return patch_size_; }
  int channels() const noexcept { return channels_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const Tensor<T>& weight() const noexcept { return weight_; }
  const Tensor<T>& bias() const noexcept { return bias_; }

  /// Returns [(H/P)*(W/P) x d_model], row-major over the patch grid.
  Tensor<T> encode(const Image& image) const {
    const int p = patch_size_;
    require(image.channels == channels_, ErrorKind::kDimension,
            "image has " + std::to_string(image.channels) + " channels, encoder expects " +
                std::to_string(channels_));
    require(image.height > 0 && image.width > 0 && image.height % p == 0 &&
                image.width % p == 0,
            ErrorKind::kDimension,
            "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                " not divisible by patch size " + std::to_string(p));
    const int gr = image.height / p, gc = image.width / p;
    const std::size_t n = static_cast<std::size_t>(gr * gc), k = weight_.rows(),
                      d = weight_.cols();
    std::vector<T> patches(n * k);
    for (int r = 0; r < gr; ++r) {
      for (int c = 0; c < gc; ++c) {
        const auto flat = flatten_patch(image, p, r, c);
        std::copy(flat.begin(), flat.end(),
                  patches.begin() + static_cast<std::ptrdiff_t>((r * gc + c) * k));
      }
    }
    Tensor<T> out(Shape{n, d});
    kernels::matmul(patches.data(), weight_.data().data(), out.data().data(), n, k, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) += bias_[j];
    }
    return out;
  }

  // FNV-1a over the float32 image of weight then bias.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor<T>* t : {&weight_, &bias_}) {
      for (T v : t->data()) {
        const float f = static_cast<float>(v);
        h = fnv1a(&f, sizeof f, h);
      }
    }
    return h;
  }

 private:
  int patch_size_ = 0;
  int channels_ = 0;
  std::uint64_t seed_ = 0;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace lvr
