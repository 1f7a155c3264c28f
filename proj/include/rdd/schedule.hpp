#pragma once

// Noise schedule, forward diffusion, deterministic DDIM stepping and the
// progressive-distillation teacher target.

#include "rdd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace rdd {

/// Variance-preserving schedule: alpha(t)^2 + sigma(t)^2 = 1 on [0, 1].
class NoiseSchedule {
  public:
    enum class Kind { cosine };

    explicit NoiseSchedule(Kind kind = Kind::cosine) : kind_(kind) {}

    Kind kind() const { return kind_; }
    double alpha(double t) const;
    double sigma(double t) const;
    /// alpha^2 / sigma^2; infinite at t = 0.
    double snr(double t) const;

  private:
    Kind kind_;
};

/// The N sampling times {i / N : i = 1..N}.
class StepGrid {
  public:
    explicit StepGrid(int steps);

    int steps() const { return steps_; }
    double step_size() const { return 1.0 / steps_; }
    /// Time of grid point i in [1, N].
    double time(int i) const;
    std::vector<double> times() const;

  private:
    int steps_;
};

/// A model predicting the clean image from a noisy one.
class Denoiser {
  public:
    virtual ~Denoiser() = default;

    /// `z` is an [N,C,H,W] batch, `t` holds one time per item, `labels` is empty
    /// for unconditional models. Returns predictions with the shape of `z`.
    virtual Tensor denoise(const Tensor& z, std::span<const double> t,
                           std::span<const int> labels) const = 0;
};

/// z_t = alpha(t) x + sigma(t) eps, with one t per batch item.
Tensor forward_diffuse(const Tensor& x, std::span<const double> t, const Tensor& eps,
                       const NoiseSchedule& sched);
Tensor forward_diffuse(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& sched);

/// Applies the DDIM update to a given clean-image prediction.
Tensor ddim_update(const Tensor& z_t, const Tensor& x_pred, std::span<const double> t,
                   std::span<const double> s, const NoiseSchedule& sched);

/// One deterministic DDIM step z_t -> z_s. Items with t = 0 are returned unchanged.
Tensor ddim_step(const Denoiser& model, const Tensor& z_t, std::span<const double> t,
                 std::span<const double> s, const NoiseSchedule& sched,
                 std::span<const int> labels = {});
Tensor ddim_step(const Denoiser& model, const Tensor& z_t, double t, double s,
                 const NoiseSchedule& sched, std::span<const int> labels = {});

/// Runs the full deterministic sampler from z_1 over the N-step grid for an
/// existing starting noise batch.
Tensor ddim_sample_from(const Denoiser& model, Tensor z1, int steps, const NoiseSchedule& sched,
                        std::span<const int> labels = {});

/// Standard-normal starting noise for one item, reproducible from `seed`.
Tensor sample_noise(Shape item_shape, std::uint64_t seed);

/// Draws z_1 from `seed` (one image of `item_shape`) and samples with `steps` steps.
Tensor ddim_sample(const Denoiser& model, int steps, std::uint64_t seed, Shape item_shape,
                   const NoiseSchedule& sched, std::optional<int> label = std::nullopt);

/// Batched sampling where item i starts from sample_noise(item_shape, seeds[i]).
Tensor ddim_sample_batch(const Denoiser& model, int steps, std::span<const std::uint64_t> seeds,
                         Shape item_shape, const NoiseSchedule& sched,
                         std::span<const int> labels = {});

/// Target clean image for a student taking one step of size 1/N from t, built
/// from two teacher DDIM steps of size 1/(2N). A single student DDIM step using
/// the returned image as its prediction reproduces the teacher's two-step result.
Tensor pd_teacher_target(const Denoiser& teacher, const Tensor& z_t, std::span<const double> t,
                         int student_steps, const NoiseSchedule& sched,
                         std::span<const int> labels = {});
Tensor pd_teacher_target(const Denoiser& teacher, const Tensor& z_t, double t, int student_steps,
                         const NoiseSchedule& sched, std::span<const int> labels = {});

/// Deterministic per-sample seed derivation (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

} // namespace rdd
