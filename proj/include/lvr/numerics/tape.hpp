#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "lvr/numerics/tensor.hpp"

namespace lvr {

/// Records whole-tensor operations for reverse-mode differentiation.
///
/// Operations append an entry only when the tape is enabled and at least one
/// operand requires a gradient, so a disabled tape doubles as inference mode.
/// Entries are appended in execution order, which keeps the tape topologically
/// sorted.
///
/// backward() zeroes the gradients of every tape-produced tensor, seeds the
/// loss with 1 and walks the tape in reverse. Leaf tensors (parameters) are
/// never reset here: calling backward() twice without zeroing them
/// accumulates, exactly as two separate losses would. Zero them explicitly
/// between optimizer steps.
template <std::floating_point T>
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const noexcept { return enabled_; }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  // True when an op over these operands must be recorded.
  template <class... Ts>
  bool tracks(const Ts&... operands) const noexcept {
    return enabled_ && (operands.requires_grad() || ...);
  }

  bool tracks_any(const std::vector<Tensor<T>>& operands) const noexcept {
    if (!enabled_) return false;
    for (const auto& t : operands) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  void record(Tensor<T> output, std::function<void()> backward_fn) {
    entries_.push_back(Entry{std::move(output), std::move(backward_fn)});
  }

  void backward(Tensor<T> loss) {
    require(loss.numel() == 1, ErrorKind::kContract,
            "backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    require(loss.requires_grad(), ErrorKind::kContract,
            "backward() on a loss that was not produced through the tape");
    loss.check_finite("loss");
    for (auto& e : entries_) e.output.zero_grad();
    loss.ensure_grad()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward_fn();
  }

 private:
  struct Entry {
    Tensor<T> output;
    std::function<void()> backward_fn;
  };
  bool enabled_;
  std::vector<Entry> entries_;
};

}  // namespace lvr
