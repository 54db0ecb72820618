#pragma once

// Dense matrix kernels behind the convolution. Both keep a fixed summation
// order per output element, so results do not depend on the thread count.

#include <algorithm>
#include <cstddef>

namespace lmnet::detail {

template <typename T>
inline constexpr std::size_t kPanelCols = 128 / sizeof(T);
inline constexpr std::size_t kTileRows = 4;

template <typename T, std::size_t Rows>
inline void gemm_tile(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                      std::size_t ldc) {
  constexpr std::size_t cols = kPanelCols<T>;
  T acc[Rows][cols];
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) acc[r][j] = c[r * ldc + j];
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (std::size_t r = 0; r < Rows; ++r) {
      const T av = a[r * lda + p];
      for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = acc[r][j];
  }
}

template <typename T>
inline void gemm_edge(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t lda,
                      const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

/// C[m x n] += A[m x k] * B[k x n], row-major. Each C element adds its k
/// products in increasing k order onto its initial value.
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                     std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t cols = kPanelCols<T>;
  const std::size_t full_panels = n / cols;
  const std::size_t panels = (n + cols - 1) / cols;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jp = 0; jp < static_cast<std::ptrdiff_t>(panels); ++jp) {
    const std::size_t j = static_cast<std::size_t>(jp) * cols;
    const std::size_t width = std::min(cols, n - j);
    const bool full = static_cast<std::size_t>(jp) < full_panels;
    std::size_t i = 0;
    if (full) {
      for (; i + kTileRows <= m; i += kTileRows) {
        gemm_tile<T, kTileRows>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
      }
      for (; i < m; ++i) gemm_tile<T, 1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    } else {
      gemm_edge(m, width, k, a, lda, b + j, ldb, c + j, ldc);
    }
  }
}

inline constexpr std::size_t kDotLanes = 16;

/// C[m x n] += A[m x k] * B[n x k]^T. Each dot product runs over 16
/// interleaved partial sums folded in lane order, then adds onto C.
template <typename T>
void gemm_nt_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                        std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t lanes = kDotLanes;
  const std::size_t body = k - k % lanes;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(n); ++jj) {
    const std::size_t j = static_cast<std::size_t>(jj);
    const T* brow = b + j * ldb;
    std::size_t i = 0;
    for (; i + kTileRows <= m; i += kTileRows) {
      T acc[kTileRows][lanes] = {};
      for (std::size_t p = 0; p < body; p += lanes) {
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const T* arow = a + (i + r) * lda + p;
          for (std::size_t l = 0; l < lanes; ++l) acc[r][l] += arow[l] * brow[p + l];
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r) {
        T sum = T{0};
        for (std::size_t l = 0; l < lanes; ++l) sum += acc[r][l];
        for (std::size_t p = body; p < k; ++p) sum += a[(i + r) * lda + p] * brow[p];
        c[(i + r) * ldc + j] += sum;
      }
    }
    for (; i < m; ++i) {
      T acc[lanes] = {};
      const T* arow = a + i * lda;
      for (std::size_t p = 0; p < body; p += lanes) {
        for (std::size_t l = 0; l < lanes; ++l) acc[l] += arow[p + l] * brow[p + l];
      }
      T sum = T{0};
      for (std::size_t l = 0; l < lanes; ++l) sum += acc[l];
      for (std::size_t p = body; p < k; ++p) sum += arow[p] * brow[p];
      c[i * ldc + j] += sum;
    }
  }
}

}  // namespace lmnet::detail
