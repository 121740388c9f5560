#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstddef>
#include <cstring>

namespace detectlab::microtensor::kernels {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
              b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                 std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
              b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Pins OpenBLAS to one thread.
inline void pin_blas_threads() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_height, out_width;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

// Output columns [lo, hi) whose input column ox*stride + x0 lies inside [0, w).
inline std::pair<long, long> valid_columns(long x0, std::size_t stride, long w, std::size_t ow) {
  const long s = static_cast<long>(stride);
  const long lo = x0 >= 0 ? 0 : (-x0 + s - 1) / s;
  const long hi = std::min<long>(static_cast<long>(ow), w - x0 <= 0 ? 0 : (w - x0 - 1) / s + 1);
  return {lo, std::max(lo, hi)};
}

// cols[(c*k + ky)*k + kx][oy*ow + ox] = image[c][oy*s - p + ky][ox*s - p + kx] (0 outside).
// Rows are ld apart (ld >= positions) so several images can share one matrix.
template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols, std::size_t ld = 0) {
  if (ld == 0) ld = g.positions();
  const std::size_t k = g.kernel;
  const std::size_t ow = g.out_width;
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ld;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, ow * sizeof(T));
            continue;
          }
          const T* src = plane + iy * w;
          const long x0 = static_cast<long>(kx) - static_cast<long>(g.pad);
          const auto [lo, hi] = valid_columns(x0, g.stride, w, ow);
          for (long ox = 0; ox < lo; ++ox) dst[ox] = T{};
          if (g.stride == 1) {
            if (hi > lo) std::memcpy(dst + lo, src + lo + x0, static_cast<std::size_t>(hi - lo) * sizeof(T));
          } else {
            const long s = static_cast<long>(g.stride);
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s + x0];
          }
          for (long ox = std::max(hi, lo); ox < static_cast<long>(ow); ++ox) dst[ox] = T{};
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into image (image is not cleared).
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image, std::size_t ld = 0) {
  if (ld == 0) ld = g.positions();
  const std::size_t k = g.kernel;
  const std::size_t ow = g.out_width;
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ld;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * ow;
          T* dst = plane + iy * w;
          const long x0 = static_cast<long>(kx) - static_cast<long>(g.pad);
          const auto [lo, hi] = valid_columns(x0, g.stride, w, ow);
          const long s = static_cast<long>(g.stride);
          for (long ox = lo; ox < hi; ++ox) dst[ox * s + x0] += src[ox];
        }
      }
    }
  }
}

}  // namespace detectlab::microtensor::kernels
