#include "rdd/kernels.hpp"

#include "kernels_common.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rdd::kernels::parallel {

namespace {

template <class T>
void gemm_omp(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
              int ldb, T beta, T* c, int ldc) {
    std::vector<T> packed;
    if (tb == Trans::yes) {
        packed.resize(std::size_t(k) * n);
#pragma omp parallel for schedule(static)
        for (int p = 0; p < k; ++p) {
            for (int j = 0; j < n; ++j) packed[std::size_t(p) * n + j] = b[std::size_t(j) * ldb + p];
        }
        b = packed.data();
        ldb = n;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        detail::gemm_nn_rows(i, i + 1, n, k, alpha, a, lda, ta, b, ldb, beta, c, ldc);
    }
}

} // namespace

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    gemm_omp(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    gemm_omp(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void im2col(const ConvGeometry& g, const float* image, float* col) {
    detail::im2col_image(g, image, col);
}

void col2im(const ConvGeometry& g, const float* col, float* image) {
    detail::col2im_image(g, col, image);
}

void conv2d_forward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                    const float* weight, const float* bias, float* y) {
    const int cols = g.col_cols();
    const int rows = g.col_rows();
    const std::size_t in_size = std::size_t(g.in_channels) * g.height * g.width;
    const std::size_t out_size = std::size_t(out_channels) * cols;
#pragma omp parallel
    {
        std::vector<float> col(std::size_t(rows) * cols);
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            detail::im2col_image(g, x + n * in_size, col.data());
            float* yn = y + n * out_size;
            detail::gemm_nn_rows(0, out_channels, cols, rows, 1.0f, weight, rows, Trans::no,
                                 col.data(), cols, 0.0f, yn, cols);
            if (bias) {
                for (int o = 0; o < out_channels; ++o) {
                    float* yo = yn + std::size_t(o) * cols;
                    for (int j = 0; j < cols; ++j) yo[j] += bias[o];
                }
            }
        }
    }
}

void conv2d_backward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                     const float* weight, const float* dy, float* dx, float* dweight,
                     float* dbias) {
    const int cols = g.col_cols();
    const int rows = g.col_rows();
    const std::size_t in_size = std::size_t(g.in_channels) * g.height * g.width;
    const std::size_t out_size = std::size_t(out_channels) * cols;
    const std::size_t col_size = std::size_t(rows) * cols;

    if (dx) {
#pragma omp parallel
        {
            std::vector<float> dcol(col_size);
#pragma omp for schedule(static)
            for (int n = 0; n < batch; ++n) {
                detail::gemm_nn_rows(0, rows, cols, out_channels, 1.0f, weight, rows, Trans::yes,
                                     dy + n * out_size, cols, 0.0f, dcol.data(), cols);
                float* dxn = dx + n * in_size;
                std::fill(dxn, dxn + in_size, 0.0f);
                detail::col2im_image(g, dcol.data(), dxn);
            }
        }
    }

    if (dweight) {
        // Transposed patches, one [cols x rows] block per image.
        std::vector<float> patches(col_size * batch);
#pragma omp parallel
        {
            std::vector<float> col(col_size);
#pragma omp for schedule(static)
            for (int n = 0; n < batch; ++n) {
                detail::im2col_image(g, x + n * in_size, col.data());
                float* pn = patches.data() + n * col_size;
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < cols; ++j) pn[std::size_t(j) * rows + r] = col[std::size_t(r) * cols + j];
                }
            }
        }
#pragma omp parallel for schedule(static)
        for (int o = 0; o < out_channels; ++o) {
            float* dwo = dweight + std::size_t(o) * rows;
            std::fill(dwo, dwo + rows, 0.0f);
            for (int n = 0; n < batch; ++n) {
                const float* dyo = dy + n * out_size + std::size_t(o) * cols;
                const float* pn = patches.data() + n * col_size;
                for (int j = 0; j < cols; ++j) {
                    const float gy = dyo[j];
                    if (gy == 0.0f) continue;
                    const float* pr = pn + std::size_t(j) * rows;
                    for (int r = 0; r < rows; ++r) dwo[r] += gy * pr[r];
                }
            }
        }
    }

    if (dbias) {
#pragma omp parallel for schedule(static)
        for (int o = 0; o < out_channels; ++o) {
            float acc = 0.0f;
            for (int n = 0; n < batch; ++n) {
                const float* dyo = dy + n * out_size + std::size_t(o) * cols;
                for (int j = 0; j < cols; ++j) acc += dyo[j];
            }
            dbias[o] = acc;
        }
    }
}

void softmax_kl(const SoftmaxKlArgs& args) {
    const int segments = args.cols / args.segment;
#pragma omp parallel
    {
        std::vector<double> scratch(4 * std::size_t(args.segment));
#pragma omp for schedule(static)
        for (int r = 0; r < args.rows; ++r) {
            for (int s = 0; s < segments; ++s) detail::softmax_kl_segment(args, r, s, scratch.data());
        }
    }
}

} // namespace rdd::kernels::parallel

namespace rdd::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

void set_backend(Backend b) { g_backend = b; }
Backend backend() { return g_backend; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

#define RDD_DISPATCH(fn, ...)                                                                      \
    (g_backend == Backend::serial ? serial::fn(__VA_ARGS__) : parallel::fn(__VA_ARGS__))

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    RDD_DISPATCH(gemm, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    RDD_DISPATCH(gemm, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void conv2d_forward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                    const float* weight, const float* bias, float* y) {
    RDD_DISPATCH(conv2d_forward, g, batch, out_channels, x, weight, bias, y);
}

void conv2d_backward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                     const float* weight, const float* dy, float* dx, float* dweight,
                     float* dbias) {
    RDD_DISPATCH(conv2d_backward, g, batch, out_channels, x, weight, dy, dx, dweight, dbias);
}

void softmax_kl(const SoftmaxKlArgs& args) { RDD_DISPATCH(softmax_kl, args); }

#undef RDD_DISPATCH

} // namespace rdd::kernels
