// Serial vs parallel kernels on shapes that occur in the desk configuration.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rdd/kernels.hpp"

namespace k = rdd::kernels;

namespace {

template <class T>
std::vector<T> noise(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<T> v(n);
    for (auto& e : v) e = T(g(rng));
    return v;
}

template <bool Parallel>
void bm_gemm(benchmark::State& st) {
    const int n = int(st.range(0));
    auto a = noise<float>(std::size_t(n) * n, 1), b = noise<float>(std::size_t(n) * n, 2);
    std::vector<float> c(std::size_t(n) * n);
    for (auto _ : st) {
        if constexpr (Parallel)
            k::parallel::gemm(k::Trans::no, k::Trans::yes, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
        else
            k::serial::gemm(k::Trans::no, k::Trans::yes, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * 2 * std::int64_t(n) * n * n);
}

template <bool Parallel>
void bm_conv(benchmark::State& st) {
    const int channels = int(st.range(0));
    const int batch = 16;
    k::ConvGeometry g{channels, 16, 16, 3, 1, 1};
    auto x = noise<float>(std::size_t(batch) * channels * 256, 3);
    auto w = noise<float>(std::size_t(channels) * g.col_rows(), 4);
    auto bias = noise<float>(channels, 5);
    std::vector<float> y(x.size());
    for (auto _ : st) {
        if constexpr (Parallel)
            k::parallel::conv2d_forward(g, batch, channels, x.data(), w.data(), bias.data(), y.data());
        else
            k::serial::conv2d_forward(g, batch, channels, x.data(), w.data(), bias.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void bm_softmax_kl(benchmark::State& st) {
    const int rows = 16 * 64, segment = 64;
    const int cols = int(st.range(0)) * segment;
    auto t = noise<double>(std::size_t(rows) * cols, 6), s = noise<double>(std::size_t(rows) * cols, 7);
    std::vector<double> loss(std::size_t(rows) * (cols / segment)), grad(t.size());
    k::SoftmaxKlArgs args{t.data(), s.data(), rows, cols, segment, 0.1, 1.0, loss.data(), grad.data()};
    for (auto _ : st) {
        if constexpr (Parallel)
            k::parallel::softmax_kl(args);
        else
            k::serial::softmax_kl(args);
        benchmark::DoNotOptimize(loss.data());
    }
}

} // namespace

BENCHMARK(bm_gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(bm_gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(bm_conv<false>)->Arg(32)->Arg(64);
BENCHMARK(bm_conv<true>)->Arg(32)->Arg(64);
BENCHMARK(bm_softmax_kl<false>)->Arg(1)->Arg(8);
BENCHMARK(bm_softmax_kl<true>)->Arg(1)->Arg(8);

BENCHMARK_MAIN();
