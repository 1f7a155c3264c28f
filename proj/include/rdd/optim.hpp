#pragma once

// Adam, gradient clipping, learning-rate schedules and weight averaging.

#include "rdd/autograd.hpp"
#include "rdd/layers.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace rdd {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam() = default;
    Adam(std::vector<nn::Param*> params, AdamConfig cfg = {});

    /// One update of every trainable parameter with the given learning rate.
    void step(double lr);

    std::int64_t steps() const { return steps_; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_steps(std::int64_t s) { steps_ = s; }
    const std::vector<nn::Param*>& params() const { return params_; }

  private:
    std::vector<nn::Param*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::int64_t steps_ = 0;
};

/// sqrt of the sum of squared gradient entries over all parameters.
double global_grad_norm(std::span<nn::Param* const> params);

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(std::span<nn::Param* const> params, double max_norm);

enum class LrSchedule { constant, cosine };

/// Linear warmup over `warmup` iterations, then constant or cosine-annealed to 0
/// at `total`. `iter` is 0-based.
double learning_rate(std::int64_t iter, double base_lr, std::int64_t warmup, std::int64_t total,
                     LrSchedule kind);

/// ema = decay * ema + (1 - decay) * live over matching parameters.
void ema_update(std::span<nn::Param* const> ema, std::span<nn::Param* const> live, double decay);

template <nn::Visitable M>
void ema_update(M& ema, M& live, double decay) {
    const auto e = nn::collect_params(ema, false);
    const auto l = nn::collect_params(live, false);
    ema_update(e, l, decay);
}

} // namespace rdd
