#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "actsparse/error.hpp"

namespace actsparse {

/// Dense row-major float32 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    require(data.size() == r * c, ErrorCode::Shape, "matrix data length does not match rows x cols");
  }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }

  bool operator==(const Matrix&) const = default;
};

inline std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows) + " x " + std::to_string(m.cols) + "]";
}

// Each output element accumulates a[i][k] * b[k][j] in ascending k, in float.
// The i-k-j loop keeps that order per element while letting the compiler
// vectorize across j, so results are bit-reproducible and match a naive
// triple loop.
inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.cols == b.rows, ErrorCode::Shape, "matmul " + shape_str(a) + " x " + shape_str(b));
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(a.rows * b.cols, 0.0f);
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    float* o = out.data.data() + i * n;
    const float* ar = a.data.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const float av = ar[k];
      const float* br = b.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  matmul_into(a, b, out);
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

inline float relu(float x) { return x > 0.0f ? x : 0.0f; }

inline float new_gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

template <typename F>
Matrix map(const Matrix& x, F&& f) {
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i]);
  return out;
}

inline Matrix relu(const Matrix& x) { return map(x, [](float v) { return relu(v); }); }
inline Matrix new_gelu(const Matrix& x) { return map(x, [](float v) { return new_gelu(v); }); }
inline Matrix silu(const Matrix& x) { return map(x, [](float v) { return silu(v); }); }

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace actsparse
