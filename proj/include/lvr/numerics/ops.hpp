#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lvr/numerics/kernels.hpp"
#include "lvr/numerics/tape.hpp"
#include "lvr/numerics/tensor.hpp"

// Differentiable whole-tensor operations. Each takes the tape first; when the
// tape tracks an operand, a backward rule is recorded that accumulates into the
// operands' gradients.
namespace lvr::ops {

namespace detail {

inline void expect(bool ok, const std::string& what) {
  require(ok, ErrorKind::kDimension, what);
}

template <class T>
void expect_matrix(const Tensor<T>& t, const char* op) {
  expect(t.rank() == 2, std::string(op) + ": expected a matrix, got " +
                            shape_string(t.shape()));
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_matrix(a, "matmul");
  detail::expect_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::expect(b.rows() == k, "matmul: inner dimensions disagree (" +
                                    shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()) + ")");
  Tensor<T> out(Shape{m, n}, tape.tracks(a, b));
  kernels::matmul(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        std::vector<T> bt(n * k);
        kernels::transpose(b.data().data(), bt.data(), k, n);
        kernels::matmul(dc, bt.data(), a.ensure_grad().data(), m, n, k, true);
      }
      if (b.requires_grad()) {
        std::vector<T> at(k * m);
        kernels::transpose(a.data().data(), at.data(), m, k);
        kernels::matmul(at.data(), dc, b.ensure_grad().data(), k, m, n, true);
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) +
                                             " vs " + shape_string(b.shape()));
  Tensor<T> out(a.shape(), tape.tracks(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (out.requires_grad()) {
    tape.record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

// x[n x d] + bias[d] broadcast over rows.
template <std::floating_point T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.rows(), d = x.cols();
  detail::expect(bias.numel() == d, "add_bias: bias length " + std::to_string(bias.numel()) +
                                        " vs width " + std::to_string(d));
  Tensor<T> out(x.shape(), tape.tracks(x, bias));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + bias[j];
  }
  if (out.requires_grad()) {
    tape.record(out, [x, bias, out, n, d]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

template <std::floating_point T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out(a.shape(), tape.tracks(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (out.requires_grad()) {
    tape.record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape(), tape.tracks(a));
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * factor;
  if (out.requires_grad()) {
    tape.record(out, [a, out, factor]() mutable {
      const auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> out(a.shape(), tape.tracks(a));
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = kernels::gelu(a[i]);
  if (out.requires_grad()) {
    tape.record(out, [a, out]() mutable {
      const auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kernels::gelu_grad(a[i]);
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> out(a.shape(), tape.tracks(a));
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = kernels::sigmoid(a[i]);
  if (out.requires_grad()) {
    tape.record(out, [a, out]() mutable {
      const auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i] * (T{1} - out[i]);
    });
  }
  return out;
}

// Row-wise layer normalization with affine gamma/beta of length cols.
template <std::floating_point T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta) {
  const std::size_t n = x.rows(), d = x.cols();
  detail::expect(gamma.numel() == d && beta.numel() == d, "layer_norm: affine size mismatch");
  Tensor<T> out(x.shape(), tape.tracks(x, gamma, beta));
  std::vector<T> xhat(n * d), rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    rstd[i] = kernels::layer_norm_row(x.data().data() + i * d, gamma.data().data(),
                                      beta.data().data(), out.data().data() + i * d,
                                      xhat.data() + i * d, d);
  }
  if (out.requires_grad()) {
    tape.record(out, [x, gamma, beta, out, n, d, xhat = std::move(xhat),
                      rstd = std::move(rstd)]() mutable {
      const auto g = out.grad();
      if (gamma.requires_grad()) {
        auto gg = gamma.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
      }
      if (beta.requires_grad()) {
        auto gb = beta.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
      }
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        std::vector<T> dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          T mean_d{0}, mean_dx{0};
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = g[i * d + j] * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * d + j];
          }
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[i * d + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

/// Row-wise log-softmax with max subtraction.
template <std::floating_point T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& logits) {
  const std::size_t n = logits.rows(), v = logits.cols();
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (std::isnan(logits[i])) fail(ErrorKind::kNumeric, "log_softmax: NaN logit");
  }
  Tensor<T> out(logits.shape(), tape.tracks(logits));
  for (std::size_t i = 0; i < n; ++i) {
    kernels::log_softmax_row(logits.data().data() + i * v, out.data().data() + i * v, v);
  }
  if (out.requires_grad()) {
    tape.record(out, [logits, out, n, v]() mutable {
      const auto g = out.grad();
      auto gx = logits.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        T s{0};
        for (std::size_t j = 0; j < v; ++j) s += g[i * v + j];
        for (std::size_t j = 0; j < v; ++j) {
          gx[i * v + j] += g[i * v + j] - std::exp(out[i * v + j]) * s;
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> softmax_logprobs(Tape<T>& tape, const Tensor<T>& logits) {
  return log_softmax(tape, logits);
}

struct RowPick {
  std::size_t source = 0;
  std::size_t row = 0;
};

/// Builds a matrix whose i-th row is row picks[i].row of sources[picks[i].source].
/// All sources must share the same width.
template <std::floating_point T>
Tensor<T> stack_rows(Tape<T>& tape, const std::vector<Tensor<T>>& sources,
                     const std::vector<RowPick>& picks) {
  detail::expect(!sources.empty(), "stack_rows: no sources");
  const std::size_t d = sources.front().cols();
  for (const auto& s : sources) detail::expect(s.cols() == d, "stack_rows: width mismatch");
  for (const auto& p : picks) {
    detail::expect(p.source < sources.size() && p.row < sources[p.source].rows(),
                   "stack_rows: pick out of range");
  }
  Tensor<T> out(Shape{picks.size(), d}, tape.tracks_any(sources));
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto src = sources[picks[i].source].row(picks[i].row);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (out.requires_grad()) {
    tape.record(out, [sources, picks, out, d]() mutable {
      const auto g = out.grad();
      for (std::size_t i = 0; i < picks.size(); ++i) {
        auto& src = sources[picks[i].source];
        if (!src.requires_grad()) continue;
        auto gs = src.ensure_grad();
        const std::size_t base = picks[i].row * d;
        for (std::size_t j = 0; j < d; ++j) gs[base + j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  std::vector<RowPick> picks;
  picks.reserve(rows.size());
  for (std::size_t r : rows) picks.push_back({0, r});
  return stack_rows(tape, std::vector<Tensor<T>>{x}, picks);
}

/// out[i] = x[rows[i], cols[i]]
template <std::floating_point T>
Tensor<T> select_entries(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& cols) {
  detail::expect(rows.size() == cols.size(), "select_entries: index lists differ in length");
  const std::size_t w = x.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::expect(rows[i] < x.rows() && cols[i] < w, "select_entries: index out of range");
  }
  Tensor<T> out(Shape{rows.size()}, tape.tracks(x));
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = x[rows[i] * w + cols[i]];
  if (out.requires_grad()) {
    tape.record(out, [x, rows, cols, out, w]() mutable {
      const auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) gx[rows[i] * w + cols[i]] += g[i];
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(Shape{}, tape.tracks(x));
  T s{0};
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  out[0] = s;
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const T g = out.grad()[0];
      auto gx = x.ensure_grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  detail::expect(x.numel() > 0, "mean: empty tensor");
  return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.numel()));
}

/// Mean over rows of the squared L2 distance between matching rows:
/// (1/T) * sum_t ||pred_t - target_t||^2. Averages over the T rows, not over
/// the T*d scalar entries.
template <std::floating_point T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::expect(pred.shape() == target.shape(),
                 "mse: shape mismatch " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  const std::size_t rows = pred.rows();
  detail::expect(rows > 0, "mse: no rows");
  Tensor<T> out(Shape{}, tape.tracks(pred, target));
  T s{0};
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const T diff = pred[i] - target[i];
    s += diff * diff;
  }
  out[0] = s / static_cast<T>(rows);
  if (out.requires_grad()) {
    tape.record(out, [pred, target, out, rows]() mutable {
      const T g = out.grad()[0] * T{2} / static_cast<T>(rows);
      if (pred.requires_grad()) {
        auto gp = pred.ensure_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (pred[i] - target[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (pred[i] - target[i]);
      }
    });
  }
  return out;
}

/// Mean binary cross-entropy of p_r = softmax(logits[rows[r]])[class_id]
/// against targets[r] in {0, 1}. log(1 - p) is evaluated as a log-sum-exp over
/// the remaining classes so it stays finite when p saturates.
template <std::floating_point T>
Tensor<T> class_bce(Tape<T>& tape, const Tensor<T>& logits, const std::vector<std::size_t>& rows,
                    const std::vector<int>& targets, std::size_t class_id) {
  detail::expect(rows.size() == targets.size() && !rows.empty(), "class_bce: bad index lists");
  const std::size_t v = logits.cols();
  detail::expect(class_id < v && v >= 2, "class_bce: class id out of range");
  const std::size_t n = rows.size();
  // Per row: log p, log(1-p), and the lse of the full row and of the others.
  std::vector<T> lse_all(n), lse_rest(n);
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.data().data() + rows[r] * v;
    T m = -std::numeric_limits<T>::infinity(), mr = m;
    for (std::size_t j = 0; j < v; ++j) {
      m = std::max(m, z[j]);
      if (j != class_id) mr = std::max(mr, z[j]);
    }
    T s{0}, sr{0};
    for (std::size_t j = 0; j < v; ++j) {
      s += std::exp(z[j] - m);
      if (j != class_id) sr += std::exp(z[j] - mr);
    }
    lse_all[r] = m + std::log(s);
    lse_rest[r] = mr + std::log(sr);
    const T log_p = z[class_id] - lse_all[r];
    const T log_q = lse_rest[r] - lse_all[r];
    total -= targets[r] ? log_p : log_q;
  }
  Tensor<T> out(Shape{}, tape.tracks(logits));
  out[0] = total / static_cast<T>(n);
  if (out.requires_grad()) {
    tape.record(out, [logits, rows, targets, class_id, out, v, n, lse_all = std::move(lse_all),
                      lse_rest = std::move(lse_rest)]() mutable {
      const T g = out.grad()[0] / static_cast<T>(n);
      auto gx = logits.ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t base = rows[r] * v;
        for (std::size_t j = 0; j < v; ++j) {
          const T soft = std::exp(logits[base + j] - lse_all[r]);
          T d;
          if (targets[r]) {
            d = (j == class_id ? T{1} : T{0}) - soft;
          } else {
            const T soft_rest = j == class_id ? T{0} : std::exp(logits[base + j] - lse_rest[r]);
            d = soft_rest - soft;
          }
          gx[base + j] -= g * d;
        }
      }
    });
  }
  return out;
}

/// Multi-head causal self-attention over packed sequences. Row i attends to
/// rows segment_start[i]..i, so packed neighbours never see each other.
template <std::floating_point T>
Tensor<T> causal_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t n_heads,
                           const std::vector<std::size_t>& segment_start) {
  detail::expect(q.shape() == k.shape() && q.shape() == v.shape() && q.rank() == 2,
                 "causal_attention: q/k/v shape mismatch");
  const std::size_t n = q.rows(), d = q.cols();
  detail::expect(n_heads > 0 && d % n_heads == 0, "causal_attention: width not divisible by heads");
  detail::expect(segment_start.size() == n, "causal_attention: segment table length mismatch");
  const std::size_t hd = d / n_heads;
  const T scale_factor = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    detail::expect(segment_start[i] <= i, "causal_attention: segment start after row");
    offset[i + 1] = offset[i] + (i - segment_start[i] + 1);
  }
  const std::size_t per_head = offset[n];
  std::vector<T> probs(per_head * n_heads);
  Tensor<T> out(Shape{n, d}, tape.tracks(q, k, v));
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      kernels::attend_row(q.data().data() + i * d, k.data().data(), v.data().data(), d,
                          segment_start[i], i, h * hd, hd, scale_factor,
                          out.data().data() + i * d, probs.data() + h * per_head + offset[i]);
    }
  }
  if (out.requires_grad()) {
    tape.record(out, [q, k, v, out, n, d, hd, n_heads, scale_factor, segment_start, offset,
                      per_head, probs = std::move(probs)]() mutable {
      const auto g = out.grad();
      std::span<T> gq, gk, gv;
      if (q.requires_grad()) gq = q.ensure_grad();
      if (k.requires_grad()) gk = k.ensure_grad();
      if (v.requires_grad()) gv = v.ensure_grad();
      std::vector<T> dp;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t col = h * hd;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t first = segment_start[i];
          const std::size_t len = i - first + 1;
          const T* p = probs.data() + h * per_head + offset[i];
          const T* go = g.data() + i * d + col;
          dp.assign(len, T{0});
          T s{0};
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t j = first + t;
            T acc{0};
            for (std::size_t c = 0; c < hd; ++c) acc += go[c] * v[j * d + col + c];
            dp[t] = acc;
            s += p[t] * acc;
            if (!gv.empty()) {
              for (std::size_t c = 0; c < hd; ++c) gv[j * d + col + c] += p[t] * go[c];
            }
          }
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t j = first + t;
            const T ds = p[t] * (dp[t] - s) * scale_factor;
            if (!gq.empty()) {
              for (std::size_t c = 0; c < hd; ++c) gq[i * d + col + c] += ds * k[j * d + col + c];
            }
            if (!gk.empty()) {
              for (std::size_t c = 0; c < hd; ++c) gk[j * d + col + c] += ds * q[i * d + col + c];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace lvr::ops
