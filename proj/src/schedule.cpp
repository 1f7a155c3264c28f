#include "rdd/schedule.hpp"

#include "rdd/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace rdd {

namespace {

void check_time(double t) {
    RDD_REQUIRE(t >= 0.0 && t <= 1.0, "time " + std::to_string(t) + " outside [0, 1]");
}

void check_batch(const Tensor& z, std::span<const double> t) {
    RDD_REQUIRE(t.size() == std::size_t(z.shape().n),
                "expected one time per batch item (" + std::to_string(z.shape().n) + "), got " +
                    std::to_string(t.size()));
}

/// Grid index i of t = i / N, validating that t lies on the grid.
int grid_index(double t, int steps) {
    const double scaled = t * steps;
    const double i = std::round(scaled);
    RDD_REQUIRE(std::abs(scaled - i) < 1e-9 && i >= 1 && i <= steps,
                "time " + std::to_string(t) + " is not on the " + std::to_string(steps) + "-step grid");
    return int(i);
}

} // namespace

double NoiseSchedule::alpha(double t) const {
    check_time(t);
    if (t == 0.0) return 1.0;
    return std::cos(0.5 * std::numbers::pi * t);
}

double NoiseSchedule::sigma(double t) const {
    check_time(t);
    if (t == 0.0) return 0.0;
    return std::sin(0.5 * std::numbers::pi * t);
}

double NoiseSchedule::snr(double t) const {
    const double s = sigma(t);
    const double a = alpha(t);
    if (s == 0.0) return std::numeric_limits<double>::infinity();
    return (a * a) / (s * s);
}

StepGrid::StepGrid(int steps) : steps_(steps) {
    RDD_REQUIRE(steps >= 1, "step count must be positive, got " + std::to_string(steps));
}

double StepGrid::time(int i) const {
    RDD_REQUIRE(i >= 1 && i <= steps_, "grid index out of range");
    return double(i) / steps_;
}

std::vector<double> StepGrid::times() const {
    std::vector<double> out;
    out.reserve(steps_);
    for (int i = 1; i <= steps_; ++i) out.push_back(time(i));
    return out;
}

Tensor forward_diffuse(const Tensor& x, std::span<const double> t, const Tensor& eps,
                       const NoiseSchedule& sched) {
    RDD_REQUIRE(x.shape() == eps.shape(),
                "noise shape " + eps.shape().str() + " does not match image shape " + x.shape().str());
    check_batch(x, t);
    Tensor z(x.shape());
    const std::size_t m = x.shape().per_item();
    for (int n = 0; n < x.shape().n; ++n) {
        const double a = sched.alpha(t[n]);
        const double s = sched.sigma(t[n]);
        const float* xi = x.item(n);
        const float* ei = eps.item(n);
        float* zi = z.item(n);
        for (std::size_t i = 0; i < m; ++i) zi[i] = float(a * xi[i] + s * ei[i]);
    }
    return z;
}

Tensor forward_diffuse(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& sched) {
    std::vector<double> ts(x.shape().n, t);
    return forward_diffuse(x, ts, eps, sched);
}

Tensor ddim_update(const Tensor& z_t, const Tensor& x_pred, std::span<const double> t,
                   std::span<const double> s, const NoiseSchedule& sched) {
    RDD_REQUIRE(z_t.shape() == x_pred.shape(), "prediction shape does not match z_t");
    check_batch(z_t, t);
    check_batch(z_t, s);
    Tensor z_s(z_t.shape());
    const std::size_t m = z_t.shape().per_item();
    for (int n = 0; n < z_t.shape().n; ++n) {
        RDD_REQUIRE(s[n] <= t[n], "target time s=" + std::to_string(s[n]) +
                                      " exceeds current time t=" + std::to_string(t[n]));
        const float* z = z_t.item(n);
        float* out = z_s.item(n);
        const double sig_t = sched.sigma(t[n]);
        if (sig_t == 0.0) {
            std::copy_n(z, m, out);
            continue;
        }
        const double ratio = sched.sigma(s[n]) / sig_t;
        const double cx = sched.alpha(s[n]) - ratio * sched.alpha(t[n]);
        const float* x = x_pred.item(n);
        for (std::size_t i = 0; i < m; ++i) out[i] = float(ratio * z[i] + cx * x[i]);
    }
    return z_s;
}

Tensor ddim_step(const Denoiser& model, const Tensor& z_t, std::span<const double> t,
                 std::span<const double> s, const NoiseSchedule& sched, std::span<const int> labels) {
    check_batch(z_t, t);
    check_batch(z_t, s);
    for (std::size_t i = 0; i < t.size(); ++i) {
        check_time(t[i]);
        check_time(s[i]);
        RDD_REQUIRE(s[i] <= t[i], "target time s=" + std::to_string(s[i]) +
                                      " exceeds current time t=" + std::to_string(t[i]));
    }
    const Tensor x_pred = model.denoise(z_t, t, labels);
    RDD_REQUIRE(x_pred.shape() == z_t.shape(), "denoiser changed the image shape");
    return ddim_update(z_t, x_pred, t, s, sched);
}

Tensor ddim_step(const Denoiser& model, const Tensor& z_t, double t, double s,
                 const NoiseSchedule& sched, std::span<const int> labels) {
    std::vector<double> ts(z_t.shape().n, t);
    std::vector<double> ss(z_t.shape().n, s);
    return ddim_step(model, z_t, ts, ss, sched, labels);
}

Tensor ddim_sample_from(const Denoiser& model, Tensor z, int steps, const NoiseSchedule& sched,
                        std::span<const int> labels) {
    const StepGrid grid(steps);
    for (int i = steps; i >= 1; --i) {
        const double t = grid.time(i);
        const double s = i == 1 ? 0.0 : grid.time(i - 1);
        z = ddim_step(model, z, t, s, sched, labels);
    }
    return z;
}

Tensor sample_noise(Shape item_shape, std::uint64_t seed) {
    item_shape.n = 1;
    Tensor z(item_shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : z.vec()) v = normal(rng);
    return z;
}

Tensor ddim_sample(const Denoiser& model, int steps, std::uint64_t seed, Shape item_shape,
                   const NoiseSchedule& sched, std::optional<int> label) {
    RDD_REQUIRE(steps >= 1, "step count must be positive, got " + std::to_string(steps));
    std::vector<int> labels;
    if (label) labels.push_back(*label);
    return ddim_sample_from(model, sample_noise(item_shape, seed), steps, sched, labels);
}

Tensor ddim_sample_batch(const Denoiser& model, int steps, std::span<const std::uint64_t> seeds,
                         Shape item_shape, const NoiseSchedule& sched, std::span<const int> labels) {
    RDD_REQUIRE(steps >= 1, "step count must be positive, got " + std::to_string(steps));
    item_shape.n = int(seeds.size());
    Tensor z(item_shape);
    const std::size_t m = item_shape.per_item();
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const Tensor one = sample_noise(item_shape, seeds[i]);
        std::copy_n(one.data(), m, z.item(int(i)));
    }
    return ddim_sample_from(model, std::move(z), steps, sched, labels);
}

Tensor pd_teacher_target(const Denoiser& teacher, const Tensor& z_t, std::span<const double> t,
                         int student_steps, const NoiseSchedule& sched, std::span<const int> labels) {
    RDD_REQUIRE(student_steps >= 1, "student step count must be positive");
    check_batch(z_t, t);
    const int batch = z_t.shape().n;
    std::vector<double> t_mid(batch);
    std::vector<double> t_end(batch);
    for (int n = 0; n < batch; ++n) {
        const int i = grid_index(t[n], student_steps);
        t_mid[n] = double(2 * i - 1) / (2.0 * student_steps);
        t_end[n] = double(i - 1) / student_steps;
    }
    const Tensor z_mid = ddim_step(teacher, z_t, t, t_mid, sched, labels);
    const Tensor z_end = ddim_step(teacher, z_mid, t_mid, t_end, sched, labels);

    Tensor target(z_t.shape());
    const std::size_t m = z_t.shape().per_item();
    for (int n = 0; n < batch; ++n) {
        const float* ze = z_end.item(n);
        float* out = target.item(n);
        if (t_end[n] == 0.0) {
            std::copy_n(ze, m, out);
            continue;
        }
        const double ratio = sched.sigma(t_end[n]) / sched.sigma(t[n]);
        const double denom = sched.alpha(t_end[n]) - ratio * sched.alpha(t[n]);
        if (std::abs(denom) < 1e-12) throw SingularTarget(t[n], t_end[n], denom);
        const float* z = z_t.item(n);
        for (std::size_t i = 0; i < m; ++i) out[i] = float((ze[i] - ratio * z[i]) / denom);
    }
    return target;
}

Tensor pd_teacher_target(const Denoiser& teacher, const Tensor& z_t, double t, int student_steps,
                         const NoiseSchedule& sched, std::span<const int> labels) {
    std::vector<double> ts(z_t.shape().n, t);
    return pd_teacher_target(teacher, z_t, ts, student_steps, sched, labels);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace rdd
