#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lvr/numerics/tensor.hpp"

namespace lvr {

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam. Moments are kept per parameter in the order of
/// the parameter list passed to step(); that list must not change shape
/// between calls. Frozen parameters are skipped and keep no state.
template <std::floating_point T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  std::uint64_t step_count() const noexcept { return step_; }

  void step(std::span<Parameter<T>> params) {
    if (first_.empty()) {
      first_.resize(params.size());
      second_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        first_[i].assign(params[i].tensor.numel(), 0.0);
        second_[i].assign(params[i].tensor.numel(), 0.0);
      }
    }
    require(first_.size() == params.size(), ErrorKind::kContract,
            "AdamW: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      if (!p.trainable) continue;
      require(first_[i].size() == p.tensor.numel(), ErrorKind::kContract,
              "AdamW: state shape mismatch for " + p.name);
      require(p.tensor.has_grad(), ErrorKind::kContract,
              "AdamW: trainable tensor " + p.name + " has no gradient");
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.trainable) continue;
      auto w = p.tensor.data();
      const auto g = p.tensor.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = b1 * m[j] + (1.0 - b1) * gj;
        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        double wj = static_cast<double>(w[j]);
        wj -= lr * config_.weight_decay * wj;
        wj -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
        w[j] = static_cast<T>(wj);
      }
    }
  }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace lvr
