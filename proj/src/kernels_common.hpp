#pragma once

// Building blocks shared by the serial and parallel kernel sets.

#include "rdd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace rdd::kernels::detail {

inline void im2col_image(const ConvGeometry& g, const float* image, float* col) {
    const int ho = g.out_height();
    const int wo = g.out_width();
    for (int c = 0; c < g.in_channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                float* dst = col + (std::size_t(c * g.kernel + ky) * g.kernel + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    float* row = dst + oy * wo;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(row, row + wo, 0.0f);
                        continue;
                    }
                    const float* src = image + (std::size_t(c) * g.height + iy) * g.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

/// Accumulates into `image`, which the caller zeroes.
inline void col2im_image(const ConvGeometry& g, const float* col, float* image) {
    const int ho = g.out_height();
    const int wo = g.out_width();
    for (int c = 0; c < g.in_channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const float* src = col + (std::size_t(c * g.kernel + ky) * g.kernel + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    float* dst = image + (std::size_t(c) * g.height + iy) * g.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.width) dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Row-major C[m x n] (+)= A[m x k] * B[k x n] with contiguous inner loop.
template <class T>
inline void gemm_nn_rows(int row_begin, int row_end, int n, int k, T alpha, const T* a, int lda,
                         Trans ta, const T* b, int ldb, T beta, T* c, int ldc) {
    for (int i = row_begin; i < row_end; ++i) {
        T* ci = c + std::size_t(i) * ldc;
        if (beta == T(0)) {
            std::fill(ci, ci + n, T(0));
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) ci[j] *= beta;
        }
        for (int p = 0; p < k; ++p) {
            const T av = alpha * (ta == Trans::no ? a[std::size_t(i) * lda + p]
                                                  : a[std::size_t(p) * lda + i]);
            if (av == T(0)) continue;
            const T* bp = b + std::size_t(p) * ldb;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

/// One KL(softmax(t/tau_t) || softmax(s/tau_s)) segment. `scratch` holds 4 * segment doubles.
inline void softmax_kl_segment(const SoftmaxKlArgs& a, int row, int seg, double* scratch) {
    const int len = a.segment;
    const std::size_t base = std::size_t(row) * a.cols + std::size_t(seg) * len;
    const double* t = a.teacher + base;
    const double* s = a.student + base;
    double* log_q = scratch;
    double* log_p = scratch + len;

    double tmax = -std::numeric_limits<double>::infinity();
    double smax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < len; ++i) {
        log_q[i] = t[i] / a.tau_teacher;
        log_p[i] = s[i] / a.tau_student;
        tmax = std::max(tmax, log_q[i]);
        smax = std::max(smax, log_p[i]);
    }
    double tsum = 0.0;
    double ssum = 0.0;
    for (int i = 0; i < len; ++i) {
        tsum += std::exp(log_q[i] - tmax);
        ssum += std::exp(log_p[i] - smax);
    }
    const double tlse = tmax + std::log(tsum);
    const double slse = smax + std::log(ssum);
    const double log_floor = std::log(kProbFloor);

    double kl = 0.0;
    for (int i = 0; i < len; ++i) {
        log_q[i] -= tlse;
        log_p[i] -= slse;
        const double q = std::exp(log_q[i]);
        if (q > 0.0) kl += q * (log_q[i] - std::max(log_p[i], log_floor));
    }
    a.segment_loss[std::size_t(row) * (a.cols / len) + seg] = kl;

    if (a.grad_student) {
        double* g = a.grad_student + base;
        for (int i = 0; i < len; ++i) {
            g[i] = (std::exp(log_p[i]) - std::exp(log_q[i])) / a.tau_student;
        }
    }
}

} // namespace rdd::kernels::detail
