#include "doctest.h"
#include "oracles.hpp"

#include "rdd/kernels.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace rdd::kernels;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::vector<T> v(n);
    for (T& x : v) x = T(normal(rng));
    return v;
}

template <class T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - double(b[i])));
    return d;
}

/// Direct 7-loop convolution with zero padding.
std::vector<float> naive_conv(const ConvGeometry& g, int batch, int out_c, const std::vector<float>& x,
                              const std::vector<float>& w, const std::vector<float>& b) {
    const int ho = g.out_height(), wo = g.out_width();
    std::vector<float> y(std::size_t(batch) * out_c * ho * wo);
    for (int n = 0; n < batch; ++n) {
        for (int o = 0; o < out_c; ++o) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double s = b[o];
                    for (int c = 0; c < g.in_channels; ++c) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
                                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                                s += double(x[((std::size_t(n) * g.in_channels + c) * g.height + iy) * g.width + ix]) *
                                     w[((std::size_t(o) * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
                            }
                        }
                    }
                    y[((std::size_t(n) * out_c + o) * ho + oy) * wo + ox] = float(s);
                }
            }
        }
    }
    return y;
}

} // namespace

TEST_CASE("gemm matches a triple loop for every transpose combination") {
    std::mt19937_64 rng(1);
    const int m = 7, n = 5, k = 9;
    for (Trans ta : {Trans::no, Trans::yes}) {
        for (Trans tb : {Trans::no, Trans::yes}) {
            const auto a = random_vec<double>(m * k, rng), b = random_vec<double>(k * n, rng);
            const int lda = ta == Trans::no ? k : m, ldb = tb == Trans::no ? n : k;
            auto at = [&](int i, int p) { return ta == Trans::no ? a[i * lda + p] : a[p * lda + i]; };
            auto bt = [&](int p, int j) { return tb == Trans::no ? b[p * ldb + j] : b[j * ldb + p]; };
            const auto c0 = random_vec<double>(m * n, rng);
            std::vector<double> expected(c0);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int p = 0; p < k; ++p) s += at(i, p) * bt(p, j);
                    expected[i * n + j] = 0.5 * s + 2.0 * c0[i * n + j];
                }
            }
            auto cs = c0, cp = c0;
            serial::gemm(ta, tb, m, n, k, 0.5, a.data(), lda, b.data(), ldb, 2.0, cs.data(), n);
            parallel::gemm(ta, tb, m, n, k, 0.5, a.data(), lda, b.data(), ldb, 2.0, cp.data(), n);
            CHECK(max_diff(cs, expected) < 1e-12);
            CHECK(max_diff(cp, expected) < 1e-12);

            const auto af = random_vec<float>(m * k, rng), bf = random_vec<float>(k * n, rng);
            std::vector<float> fs(m * n), fp(m * n);
            serial::gemm(ta, tb, m, n, k, 1.0f, af.data(), lda, bf.data(), ldb, 0.0f, fs.data(), n);
            parallel::gemm(ta, tb, m, n, k, 1.0f, af.data(), lda, bf.data(), ldb, 0.0f, fp.data(), n);
            CHECK(max_diff(fs, fp) < 1e-5);
        }
    }
}

TEST_CASE("convolution forward matches the direct sum; serial and parallel agree") {
    std::mt19937_64 rng(2);
    for (int stride : {1, 2}) {
        for (int kernel : {1, 3}) {
            ConvGeometry g{3, 6, 5, kernel, stride, kernel / 2};
            const int batch = 2, out_c = 4;
            const auto x = random_vec<float>(std::size_t(batch) * 3 * 6 * 5, rng);
            const auto w = random_vec<float>(std::size_t(out_c) * 3 * kernel * kernel, rng);
            const auto b = random_vec<float>(out_c, rng);
            const std::size_t ny = std::size_t(batch) * out_c * g.out_height() * g.out_width();
            std::vector<float> ys(ny), yp(ny);
            serial::conv2d_forward(g, batch, out_c, x.data(), w.data(), b.data(), ys.data());
            parallel::conv2d_forward(g, batch, out_c, x.data(), w.data(), b.data(), yp.data());
            const auto expected = naive_conv(g, batch, out_c, x, w, b);
            CHECK(max_diff(ys, expected) < 1e-4);
            CHECK(max_diff(yp, expected) < 1e-4);

            const auto dy = random_vec<float>(ny, rng);
            std::vector<float> dxs(x.size()), dws(w.size()), dbs(out_c), dxp(x.size()), dwp(w.size()), dbp(out_c);
            serial::conv2d_backward(g, batch, out_c, x.data(), w.data(), dy.data(), dxs.data(), dws.data(), dbs.data());
            parallel::conv2d_backward(g, batch, out_c, x.data(), w.data(), dy.data(), dxp.data(), dwp.data(),
                                      dbp.data());
            CHECK(max_diff(dxs, dxp) < 1e-4);
            CHECK(max_diff(dws, dwp) < 1e-4);
            CHECK(max_diff(dbs, dbp) < 1e-4);

            // <dy, conv(x)> is linear in x and w, so its gradients are exact adjoints.
            auto inner = [&](const std::vector<float>& xx, const std::vector<float>& ww) {
                const auto y = naive_conv(g, batch, out_c, xx, ww, std::vector<float>(out_c, 0.0f));
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * dy[i];
                return s;
            };
            for (std::size_t i = 0; i < x.size(); i += 7) {
                std::vector<float> e(x.size(), 0.0f);
                e[i] = 1.0f;
                CHECK(dxs[i] == doctest::Approx(inner(e, w)).epsilon(1e-4).scale(1.0));
            }
            for (std::size_t i = 0; i < w.size(); i += 5) {
                std::vector<float> e(w.size(), 0.0f);
                e[i] = 1.0f;
                CHECK(dws[i] == doctest::Approx(inner(x, e)).epsilon(1e-4).scale(1.0));
            }
            double db0 = 0.0;
            for (int n = 0; n < batch; ++n) {
                for (int p = 0; p < g.out_height() * g.out_width(); ++p) {
                    db0 += dy[(std::size_t(n) * out_c) * g.out_height() * g.out_width() + p];
                }
            }
            CHECK(dbs[0] == doctest::Approx(db0).epsilon(1e-4));
        }
    }
}

TEST_CASE("im2col / col2im are adjoint") {
    std::mt19937_64 rng(3);
    ConvGeometry g{2, 5, 4, 3, 2, 1};
    const auto img = random_vec<float>(2 * 5 * 4, rng);
    const auto col = random_vec<float>(std::size_t(g.col_rows()) * g.col_cols(), rng);
    std::vector<float> c1(col.size()), i1(img.size(), 0.0f);
    serial::im2col(g, img.data(), c1.data());
    serial::col2im(g, col.data(), i1.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) lhs += double(c1[i]) * col[i];
    for (std::size_t i = 0; i < img.size(); ++i) rhs += double(img[i]) * i1[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    std::vector<float> c2(col.size()), i2(img.size(), 0.0f);
    parallel::im2col(g, img.data(), c2.data());
    parallel::col2im(g, col.data(), i2.data());
    CHECK(max_diff(c1, c2) == 0.0);
    CHECK(max_diff(i1, i2) < 1e-6);
}

TEST_CASE("segmented softmax-KL matches the oracle and its gradient") {
    std::mt19937_64 rng(4);
    const int rows = 5, seg = 4, cols = 12;
    const auto t = random_vec<double>(rows * cols, rng);
    auto s = random_vec<double>(rows * cols, rng);
    for (auto impl : {&serial::softmax_kl, &parallel::softmax_kl}) {
        std::vector<double> loss(rows * cols / seg), grad(rows * cols);
        SoftmaxKlArgs args{t.data(), s.data(), rows, cols, seg, 0.7, 1.3, loss.data(), grad.data()};
        impl(args);
        for (int r = 0; r < rows; ++r) {
            for (int k = 0; k < cols / seg; ++k) {
                const std::vector<double> tv(t.begin() + r * cols + k * seg, t.begin() + r * cols + (k + 1) * seg);
                const std::vector<double> sv(s.begin() + r * cols + k * seg, s.begin() + r * cols + (k + 1) * seg);
                CHECK(std::abs(loss[r * (cols / seg) + k] - oracle::kl(oracle::softmax(tv, 0.7), oracle::softmax(sv, 1.3))) <
                      1e-12);
            }
        }
        auto total = [&] {
            std::vector<double> l(rows * cols / seg);
            SoftmaxKlArgs a{t.data(), s.data(), rows, cols, seg, 0.7, 1.3, l.data(), nullptr};
            impl(a);
            double sum = 0.0;
            for (double v : l) sum += v;
            return sum;
        };
        CHECK(oracle::relative_error(grad, oracle::central_difference(s, total)) < 1e-6);
    }
}

TEST_CASE("backend dispatch") {
    const Backend before = backend();
    set_backend(Backend::serial);
    CHECK(backend() == Backend::serial);
    set_backend(Backend::parallel);
    CHECK(backend() == Backend::parallel);
    set_backend(before);
    CHECK(max_threads() >= 1);
}
