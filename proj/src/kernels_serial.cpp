#include "rdd/kernels.hpp"

#include "kernels_common.hpp"

#include <algorithm>
#include <vector>

namespace rdd::kernels::serial {

namespace {

template <class T>
void gemm_ref(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
              int ldb, T beta, T* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                const T av = ta == Trans::no ? a[i * lda + p] : a[p * lda + i];
                const T bv = tb == Trans::no ? b[p * ldb + j] : b[j * ldb + p];
                acc += av * bv;
            }
            c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
        }
    }
}

} // namespace

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    gemm_ref(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    gemm_ref(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void im2col(const ConvGeometry& g, const float* image, float* col) {
    detail::im2col_image(g, image, col);
}

void col2im(const ConvGeometry& g, const float* col, float* image) {
    detail::col2im_image(g, col, image);
}

// Direct convolution; deliberately independent of im2col so it can check it.
void conv2d_forward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                    const float* weight, const float* bias, float* y) {
    const int ho = g.out_height();
    const int wo = g.out_width();
    const int kk = g.kernel * g.kernel;
    for (int n = 0; n < batch; ++n) {
        const float* xn = x + std::size_t(n) * g.in_channels * g.height * g.width;
        float* yn = y + std::size_t(n) * out_channels * ho * wo;
        for (int o = 0; o < out_channels; ++o) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    float acc = 0.0f;
                    for (int ci = 0; ci < g.in_channels; ++ci) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            const int iy = oy * g.stride - g.pad + ky;
                            if (iy < 0 || iy >= g.height) continue;
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int ix = ox * g.stride - g.pad + kx;
                                if (ix < 0 || ix >= g.width) continue;
                                acc += weight[(std::size_t(o) * g.in_channels + ci) * kk +
                                              ky * g.kernel + kx] *
                                       xn[(std::size_t(ci) * g.height + iy) * g.width + ix];
                            }
                        }
                    }
                    yn[(std::size_t(o) * ho + oy) * wo + ox] = acc + (bias ? bias[o] : 0.0f);
                }
            }
        }
    }
}

void conv2d_backward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                     const float* weight, const float* dy, float* dx, float* dweight,
                     float* dbias) {
    const int ho = g.out_height();
    const int wo = g.out_width();
    const int kk = g.kernel * g.kernel;
    const std::size_t in_size = std::size_t(g.in_channels) * g.height * g.width;
    if (dx) std::fill(dx, dx + in_size * batch, 0.0f);
    if (dweight) std::fill(dweight, dweight + std::size_t(out_channels) * g.in_channels * kk, 0.0f);
    if (dbias) std::fill(dbias, dbias + out_channels, 0.0f);
    for (int n = 0; n < batch; ++n) {
        const float* xn = x + n * in_size;
        const float* dyn = dy + std::size_t(n) * out_channels * ho * wo;
        float* dxn = dx ? dx + n * in_size : nullptr;
        for (int o = 0; o < out_channels; ++o) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const float gy = dyn[(std::size_t(o) * ho + oy) * wo + ox];
                    if (dbias) dbias[o] += gy;
                    for (int ci = 0; ci < g.in_channels; ++ci) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            const int iy = oy * g.stride - g.pad + ky;
                            if (iy < 0 || iy >= g.height) continue;
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int ix = ox * g.stride - g.pad + kx;
                                if (ix < 0 || ix >= g.width) continue;
                                const std::size_t wi =
                                    (std::size_t(o) * g.in_channels + ci) * kk + ky * g.kernel + kx;
                                const std::size_t xi =
                                    (std::size_t(ci) * g.height + iy) * g.width + ix;
                                if (dweight) dweight[wi] += gy * xn[xi];
                                if (dxn) dxn[xi] += gy * weight[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

void softmax_kl(const SoftmaxKlArgs& args) {
    const int segments = args.cols / args.segment;
    std::vector<double> scratch(4 * std::size_t(args.segment));
    for (int r = 0; r < args.rows; ++r) {
        for (int s = 0; s < segments; ++s) {
            detail::softmax_kl_segment(args, r, s, scratch.data());
        }
    }
}

} // namespace rdd::kernels::serial
