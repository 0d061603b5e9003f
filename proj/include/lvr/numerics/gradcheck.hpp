#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lvr/numerics/tape.hpp"
#include "lvr/numerics/tensor.hpp"

namespace lvr {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every element; otherwise a seeded sample of at most this many
  // elements per tensor.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
  // 2: central difference. 4: fourth-order five-point stencil, for losses
  // whose third derivative swamps small gradients at usable step sizes.
  int stencil_points = 2;
};

/// Compares reverse-mode gradients against finite differences (central, or
/// the five-point stencil when configured), element by element, and reports
/// max |analytic - numeric| / max(|numeric|, 1e-8).
///
/// `loss_fn(tape)` must rebuild the loss from the current parameter values each
/// time it is called. Only trainable parameters are checked. Double precision
/// only: single precision has no headroom for the differences.
template <class LossFn>
GradCheckReport finite_diff_check(LossFn&& loss_fn, std::span<Parameter<double>> params,
                                  const GradCheckOptions& options = {}) {
  for (auto& p : params) {
    if (p.trainable) p.tensor.zero_grad();
  }
  {
    Tape<double> tape(true);
    Tensor<double> loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  }

  auto evaluate = [&] {
    Tape<double> tape(false);
    return loss_fn(tape).item();
  };

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.trainable) continue;
    const std::size_t n = p.tensor.numel();
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    if (options.max_elements_per_tensor && n > options.max_elements_per_tensor) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    auto w = p.tensor.data();
    for (std::size_t idx : indices) {
      const double saved = w[idx];
      auto at = [&](double offset) {
        w[idx] = saved + offset;
        return evaluate();
      };
      const double h = options.epsilon;
      double numeric;
      if (options.stencil_points == 4) {
        numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      }
      w[idx] = saved;
      const double a = analytic[pi].empty() ? 0.0 : analytic[pi][idx];
      const double err = std::abs(a - numeric) / std::max(std::abs(numeric), 1e-8);
      ++report.elements_checked;
      if (err > report.max_relative_error || !std::isfinite(err)) {
        report.max_relative_error = std::isfinite(err) ? err : INFINITY;
        report.worst_parameter = p.name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace lvr
