#include "rdd/optim.hpp"

#include "rdd/error.hpp"

#include <cmath>
#include <numbers>

namespace rdd {

Adam::Adam(std::vector<nn::Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (nn::Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        nn::Param& p = *params_[k];
        if (!p.trainable) continue;
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            m[i] = float(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
            v[i] = float(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * double(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = float(w[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

double global_grad_norm(std::span<nn::Param* const> params) {
    double sq = 0.0;
    for (const nn::Param* p : params) {
        for (float g : p->grad.vec()) sq += double(g) * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(std::span<nn::Param* const> params, double max_norm) {
    RDD_REQUIRE(max_norm > 0.0, "clip norm must be positive");
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        // A small margin keeps the float-rounded norm at or below the bound.
        const float scale = float(max_norm / norm * (1.0 - 1e-6));
        for (nn::Param* p : params) p->grad *= scale;
    }
    return norm;
}

double learning_rate(std::int64_t iter, double base_lr, std::int64_t warmup, std::int64_t total,
                     LrSchedule kind) {
    RDD_REQUIRE(total > 0 && warmup >= 0 && iter >= 0, "invalid schedule arguments");
    if (iter < warmup) return base_lr * double(iter + 1) / double(warmup);
    if (kind == LrSchedule::constant) return base_lr;
    const double span = double(std::max<std::int64_t>(total - warmup, 1));
    const double progress = std::min(double(iter - warmup) / span, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void ema_update(std::span<nn::Param* const> ema, std::span<nn::Param* const> live, double decay) {
    RDD_REQUIRE(ema.size() == live.size(), "EMA and live models differ in structure");
    RDD_REQUIRE(decay >= 0.0 && decay < 1.0, "EMA decay must lie in [0, 1)");
    for (std::size_t k = 0; k < ema.size(); ++k) {
        Tensor& e = ema[k]->value;
        const Tensor& l = live[k]->value;
        RDD_REQUIRE(e.shape() == l.shape(), "EMA and live parameter shapes differ");
        if (decay == 0.0) {
            e = l;
            continue;
        }
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = float(decay * e[i] + (1.0 - decay) * l[i]);
    }
}

} // namespace rdd
