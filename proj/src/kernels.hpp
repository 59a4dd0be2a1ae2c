#pragma once

// Packed, register-blocked GEMM. Single-threaded; the summation order depends
// only on the problem shape, so results are reproducible run to run.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace transclaw::kernels {

// Read-only strided matrix view: element (i, j) lives at p[i * rs + j * cs].
template <typename T>
struct View {
  const T* p;
  std::size_t rs;
  std::size_t cs;
  T at(std::size_t i, std::size_t j) const { return p[i * rs + j * cs]; }
};

template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr std::size_t kRows = 6;
  static constexpr std::size_t kCols = 32;
};
template <>
struct Tile<double> {
  static constexpr std::size_t kRows = 6;
  static constexpr std::size_t kCols = 16;
};

inline constexpr std::size_t kDepthBlock = 256;
inline constexpr std::size_t kRowBlock = 96;
inline constexpr std::size_t kColBlock = 1024;

template <typename T>
void micro_kernel(std::size_t kc, const T* __restrict ap, const T* __restrict bp, T* c,
                  std::size_t ldc, std::size_t rows, std::size_t cols) {
  constexpr std::size_t MR = Tile<T>::kRows, NR = Tile<T>::kCols;
  T acc[MR][NR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* a = ap + p * MR;
    const T* b = bp + p * NR;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r];
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] += acc[r][j];
  }
}

// C[m x n] (+)= A[m x k] * B[k x n]; C is row-major with leading dimension n.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, View<T> a, View<T> b, T* c,
          bool accumulate) {
  constexpr std::size_t MR = Tile<T>::kRows, NR = Tile<T>::kCols;
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<T> apack, bpack;
  for (std::size_t jc = 0; jc < n; jc += kColBlock) {
    const std::size_t nc = std::min(kColBlock, n - jc);
    const std::size_t npanels = (nc + NR - 1) / NR;
    for (std::size_t pc = 0; pc < k; pc += kDepthBlock) {
      const std::size_t kc = std::min(kDepthBlock, k - pc);
      bpack.assign(npanels * kc * NR, T(0));
      for (std::size_t jp = 0; jp < npanels; ++jp) {
        T* dst = bpack.data() + jp * kc * NR;
        const std::size_t j0 = jc + jp * NR, width = std::min(NR, jc + nc - j0);
        for (std::size_t p = 0; p < kc; ++p) {
          if (b.cs == 1) {
            const T* src = b.p + (pc + p) * b.rs + j0;
            std::copy(src, src + width, dst + p * NR);
          } else {
            for (std::size_t j = 0; j < width; ++j) dst[p * NR + j] = b.at(pc + p, j0 + j);
          }
        }
      }
      for (std::size_t ic = 0; ic < m; ic += kRowBlock) {
        const std::size_t mc = std::min(kRowBlock, m - ic);
        const std::size_t mpanels = (mc + MR - 1) / MR;
        apack.assign(mpanels * kc * MR, T(0));
        for (std::size_t ip = 0; ip < mpanels; ++ip) {
          T* dst = apack.data() + ip * kc * MR;
          const std::size_t i0 = ic + ip * MR, height = std::min(MR, ic + mc - i0);
          for (std::size_t p = 0; p < kc; ++p) {
            for (std::size_t r = 0; r < height; ++r) dst[p * MR + r] = a.at(i0 + r, pc + p);
          }
        }
        for (std::size_t jp = 0; jp < npanels; ++jp) {
          const std::size_t j0 = jc + jp * NR, width = std::min(NR, jc + nc - j0);
          for (std::size_t ip = 0; ip < mpanels; ++ip) {
            const std::size_t i0 = ic + ip * MR, height = std::min(MR, ic + mc - i0);
            micro_kernel<T>(kc, apack.data() + ip * kc * MR, bpack.data() + jp * kc * NR,
                            c + i0 * n + j0, n, height, width);
          }
        }
      }
    }
  }
}

// C = A * B, A is M x K, B is K x N.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm<T>(m, n, k, {a, k, 1}, {b, n, 1}, c, accumulate);
}

// C = A^T * B, A is K x M, B is K x N.
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm<T>(m, n, k, {a, 1, m}, {b, n, 1}, c, accumulate);
}

// C = A * B^T, A is M x K, B is N x K.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm<T>(m, n, k, {a, k, 1}, {b, 1, k}, c, accumulate);
}

}  // namespace transclaw::kernels
