#pragma once

// Distillation objectives. Every feature loss can also return its gradient with
// respect to the student-side input; teacher-side inputs are constants.

#include "rdd/features.hpp"
#include "rdd/matrix.hpp"
#include "rdd/schedule.hpp"
#include "rdd/tensor.hpp"

#include <optional>
#include <span>
#include <vector>

namespace rdd {

/// How the PD pixel loss is weighted over time.
enum class OmegaRule {
    truncated_snr, ///< max(alpha^2 / sigma^2, 1)
    none,          ///< constant 1
};

struct LossWeights {
    double alpha = 1.0; ///< weight of the intra-sample relational loss
    double beta = 0.1;  ///< weight of the memory-based relational loss
    double tau_cfd = 0.9;
    double tau_isp2p = 1.0;
    double tau_mp2p = 0.1;
    OmegaRule omega_clip = OmegaRule::truncated_snr;

    /// Throws InvalidArgument unless temperatures > 0 and weights >= 0.
    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

/// softmax(v / tau), max-subtracted.
std::vector<double> softmax_temp(std::span<const double> v, double tau);

/// sum q_i log(q_i / p_i) with p floored at 1e-12 and 0 log 0 = 0.
double kl_divergence(std::span<const double> q, std::span<const double> p);

double omega(double t, const NoiseSchedule& sched, OmegaRule rule = OmegaRule::truncated_snr);

/// omega(t) * MSE(x_T, x_S) for a single image (or a batch sharing t).
double pd_loss(const Tensor& x_T, const Tensor& x_S, double t, const NoiseSchedule& sched,
               OmegaRule rule = OmegaRule::truncated_snr);

/// Batch mean of per-item pd_loss, with t per item. `grad_student`, if given,
/// receives d loss / d x_S.
double pd_loss_batch(const Tensor& x_T, const Tensor& x_S, std::span<const double> t,
                     const NoiseSchedule& sched, OmegaRule rule, Tensor* grad_student = nullptr);

/// KL(softmax(pooled_T / tau) || softmax(pooled_S)); the student side is not softened.
double cfd_loss(std::span<const double> pooled_T, std::span<const double> pooled_S, double tau,
                std::vector<double>* grad_student = nullptr);

/// F G^T for row-normalised maps.
Matrix spatial_relation(const FeatureMap& f, const FeatureMap& g);

/// Row-mean of KL(softmax(M_T[a] / tau) || softmax(M_S[a] / tau)).
double ii_p2p_loss(const Matrix& m_teacher, const Matrix& m_student, double tau,
                   Matrix* grad_student = nullptr);

/// Mean of ii_p2p_loss over all N^2 ordered pairs of the batch. The gradient is
/// with respect to each student map.
double is_p2p_loss(std::span<const FeatureMap> f_teacher, std::span<const FeatureMap> f_student,
                   double tau, std::vector<Matrix>* grad_student = nullptr);

/// Relational KL of teacher and projected-student pixels against V contrastive
/// embeddings `e` (V x C).
double m_p2p_loss(const FeatureMap& f_teacher, const FeatureMap& f_student_projected,
                  const Matrix& e, double tau, Matrix* grad_student = nullptr);

struct LossComponents {
    double cfd = 0.0;
    double is_p2p = 0.0;
    std::optional<double> m_p2p; ///< empty while the pixel queue is not ready
};

/// cfd + alpha * is_p2p + beta * m_p2p.
double rdd_loss(const LossComponents& c, const LossWeights& w);

} // namespace rdd
