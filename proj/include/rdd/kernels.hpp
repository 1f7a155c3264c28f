#pragma once

// Compute kernels shared by the network and the loss code.
//
// Every kernel exists twice: `serial::` is the straightforward reference kept
// for testing and benchmarking, `parallel::` is the OpenMP version. Parallel
// kernels partition work by output element and never reduce across threads, so
// for a given build their results do not depend on the thread count.

#include <cstddef>

namespace rdd::kernels {

enum class Trans { no, yes };

/// Shape of a 2-D convolution applied to one image.
struct ConvGeometry {
    int in_channels = 0;
    int height = 0;
    int width = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    int col_rows() const { return in_channels * kernel * kernel; }
    int col_cols() const { return out_height() * out_width(); }
};

/// Result of a segmented softmax-KL evaluation.
/// Each row of length `cols` is split into segments of `segment` entries; one
/// KL(softmax(t / tau_t) || softmax(s / tau_s)) term is produced per segment.
struct SoftmaxKlArgs {
    const double* teacher = nullptr;
    const double* student = nullptr;
    int rows = 0;
    int cols = 0;
    int segment = 0;
    double tau_teacher = 1.0;
    double tau_student = 1.0;
    double* segment_loss = nullptr; // rows * (cols / segment) entries
    double* grad_student = nullptr; // optional, rows * cols entries; d KL / d s
};

inline constexpr double kProbFloor = 1e-12;

#define RDD_KERNEL_DECLS                                                                           \
    void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,       \
              const float* b, int ldb, float beta, float* c, int ldc);                             \
    void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,     \
              const double* b, int ldb, double beta, double* c, int ldc);                          \
    void im2col(const ConvGeometry& g, const float* image, float* col);                           \
    void col2im(const ConvGeometry& g, const float* col, float* image);                           \
    void conv2d_forward(const ConvGeometry& g, int batch, int out_channels, const float* x,        \
                        const float* weight, const float* bias, float* y);                         \
    void conv2d_backward(const ConvGeometry& g, int batch, int out_channels, const float* x,       \
                         const float* weight, const float* dy, float* dx, float* dweight,          \
                         float* dbias);                                                            \
    void softmax_kl(const SoftmaxKlArgs& args);

namespace serial {
RDD_KERNEL_DECLS
} // namespace serial

namespace parallel {
RDD_KERNEL_DECLS
} // namespace parallel

#undef RDD_KERNEL_DECLS

enum class Backend { serial, parallel };

/// Process-wide kernel selection used by the dispatching wrappers below.
void set_backend(Backend b);
Backend backend();
int max_threads();

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);
void conv2d_forward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                    const float* weight, const float* bias, float* y);
/// Any of dx / dweight / dbias may be null. dweight and dbias are overwritten, dx is overwritten.
void conv2d_backward(const ConvGeometry& g, int batch, int out_channels, const float* x,
                     const float* weight, const float* dy, float* dx, float* dweight,
                     float* dbias);
void softmax_kl(const SoftmaxKlArgs& args);

} // namespace rdd::kernels
