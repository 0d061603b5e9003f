#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lvr/error.hpp"

namespace lvr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage, which is what lets the tape refer
/// back to operands during the backward pass. Use clone() for a deep copy.
/// Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix; most operations view
/// their operands as matrices of rows() x cols().
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : s_(std::make_shared<Storage>()) { s_->value.assign(1, T{0}); }

  explicit Tensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->value.assign(shape_numel(s_->shape), T{0});
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    require(shape_numel(shape) == values.size(), ErrorKind::kDimension,
            "tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_string(shape));
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return s_->shape; }
  std::size_t rank() const noexcept { return s_->shape.size(); }
  std::size_t numel() const noexcept { return s_->value.size(); }
  std::size_t rows() const noexcept { return rank() == 0 ? 1 : s_->shape[0]; }
  std::size_t cols() const noexcept {
    return rows() == 0 ? 0 : numel() / rows();
  }

  std::span<T> data() noexcept { return s_->value; }
  std::span<const T> data() const noexcept { return s_->value; }
  std::span<T> row(std::size_t r) noexcept {
    return data().subspan(r * cols(), cols());
  }
  std::span<const T> row(std::size_t r) const noexcept {
    return data().subspan(r * cols(), cols());
  }
  T& operator[](std::size_t i) noexcept { return s_->value[i]; }
  const T& operator[](std::size_t i) const noexcept { return s_->value[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return s_->value[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept {
    return s_->value[r * cols() + c];
  }
  T item() const {
    require(numel() == 1, ErrorKind::kContract,
            "item() on tensor of shape " + shape_string(shape()));
    return s_->value[0];
  }

  bool requires_grad() const noexcept { return s_->requires_grad; }
  void set_requires_grad(bool v) noexcept { s_->requires_grad = v; }

  // The gradient buffer belongs to the shared storage, not to the handle, so
  // these are callable on const handles (the tape captures operands by value).
  bool has_grad() const noexcept { return !s_->grad.empty(); }
  // Allocates a zero gradient if none exists yet.
  std::span<T> ensure_grad() const {
    if (s_->grad.size() != numel()) s_->grad.assign(numel(), T{0});
    return s_->grad;
  }
  std::span<T> grad() const noexcept { return s_->grad; }
  void zero_grad() const { s_->grad.assign(numel(), T{0}); }
  void drop_grad() const { s_->grad.clear(); }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

  Tensor clone() const {
    return Tensor(shape(), std::vector<T>(s_->value.begin(), s_->value.end()),
                  requires_grad());
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(s_->value[i]);
    return Tensor<U>(shape(), std::move(out), requires_grad());
  }

  bool all_finite() const noexcept {
    for (T v : s_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void check_finite(const std::string& context) const {
    if (!all_finite()) fail(ErrorKind::kNumeric, "non-finite value in " + context);
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

template <std::floating_point T>
Tensor<T> make_matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                      bool requires_grad = false) {
  return Tensor<T>(Shape{rows, cols}, std::move(values), requires_grad);
}

template <std::floating_point T>
Tensor<T> make_vector(std::vector<T> values, bool requires_grad = false) {
  const std::size_t n = values.size();
  return Tensor<T>(Shape{n}, std::move(values), requires_grad);
}

/// A named tensor owned by a model, tagged trainable or frozen.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

}  // namespace lvr
