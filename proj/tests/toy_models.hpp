#pragma once

// Closed-form denoisers for schedule and trainer tests.

#include "rdd/schedule.hpp"

#include <cmath>
#include <random>

namespace toy {

/// Predicts the constant c everywhere.
struct Constant final : rdd::Denoiser {
    float c = 0.5f;
    explicit Constant(float value) : c(value) {}
    rdd::Tensor denoise(const rdd::Tensor& z, std::span<const double>, std::span<const int>) const override {
        return rdd::Tensor(z.shape(), c);
    }
};

/// A smooth, time-dependent, non-linear prediction.
struct Squash final : rdd::Denoiser {
    rdd::Tensor denoise(const rdd::Tensor& z, std::span<const double> t, std::span<const int>) const override {
        rdd::Tensor out(z.shape());
        const std::size_t m = z.shape().per_item();
        for (int n = 0; n < z.shape().n; ++n) {
            for (std::size_t k = 0; k < m; ++k) {
                out.item(n)[k] = float(0.8 * std::tanh(z.item(n)[k]) + 0.1 * t[n]);
            }
        }
        return out;
    }
};

inline rdd::Tensor random_tensor(rdd::Shape s, std::mt19937_64& rng, float scale = 1.0f) {
    rdd::Tensor t(s);
    std::normal_distribution<float> normal(0.0f, scale);
    for (float& v : t.vec()) v = normal(rng);
    return t;
}

} // namespace toy
