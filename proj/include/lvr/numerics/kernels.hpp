#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

// Row kernels shared by the taped operations and the KV-cached decoder. Every
// output row depends only on its own input row (plus the attended key/value
// rows), with a fixed reduction order, so a row computed incrementally is
// bit-identical to the same row computed inside a full pass.
namespace lvr::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out[n x m] = in[m x n]^T
template <class T>
void transpose(const T* in, T* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
}

inline constexpr double kLayerNormEps = 1e-5;

// Writes the normalized row and returns 1/sigma.
template <class T>
T layer_norm_row(const T* x, const T* gamma, const T* beta, T* y, T* xhat,
                 std::size_t d) {
  T mean{0};
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var{0};
  for (std::size_t j = 0; j < d; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rstd = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (std::size_t j = 0; j < d; ++j) {
    const T h = (x[j] - mean) * rstd;
    xhat[j] = h;
    y[j] = h * gamma[j] + beta[j];
  }
  return rstd;
}

template <class T>
void log_softmax_row(const T* x, T* y, std::size_t n) {
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, x[j]);
  T s{0};
  for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - m);
  const T lse = m + std::log(s);
  for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
}

template <class T>
T gelu(T x) {
  constexpr T k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = static_cast<T>(0.044715);
  return T{0.5} * x * (T{1} + std::tanh(k0 * (x + k1 * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
  constexpr T k0 = static_cast<T>(0.7978845608028654);
  constexpr T k1 = static_cast<T>(0.044715);
  const T u = k0 * (x + k1 * x * x * x);
  const T t = std::tanh(u);
  const T du = k0 * (T{1} + T{3} * k1 * x * x);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * du;
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// One query row against key/value rows first..last (inclusive) for the head
// occupying columns [col, col + head_dim). Rows of K and V are `stride` apart.
// Writes head_dim outputs and last - first + 1 attention probabilities.
template <class T>
void attend_row(const T* q, const T* keys, const T* values, std::size_t stride,
                std::size_t first, std::size_t last, std::size_t col,
                std::size_t head_dim, T scale, T* out, T* probs) {
  const std::size_t n = last - first + 1;
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    const T* krow = keys + (first + t) * stride + col;
    T s{0};
    for (std::size_t c = 0; c < head_dim; ++c) s += q[col + c] * krow[c];
    s *= scale;
    probs[t] = s;
    m = std::max(m, s);
  }
  T z{0};
  for (std::size_t t = 0; t < n; ++t) {
    probs[t] = std::exp(probs[t] - m);
    z += probs[t];
  }
  for (std::size_t t = 0; t < n; ++t) probs[t] /= z;
  T* o = out + col;
  std::fill(o, o + head_dim, T{0});
  for (std::size_t t = 0; t < n; ++t) {
    const T* vrow = values + (first + t) * stride + col;
    const T p = probs[t];
    for (std::size_t c = 0; c < head_dim; ++c) o[c] += p * vrow[c];
  }
}

}  // namespace lvr::kernels
