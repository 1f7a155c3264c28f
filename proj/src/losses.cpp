#include "rdd/losses.hpp"

#include "rdd/error.hpp"
#include "rdd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rdd {

namespace {

void check_tau(double tau) {
    RDD_REQUIRE(tau > 0.0 && std::isfinite(tau), "temperature must be positive, got " + std::to_string(tau));
}

void check_normalized(const FeatureMap& f, const char* what) {
    RDD_REQUIRE(f.normalized, std::string(what) + " must be l2-normalised");
    RDD_REQUIRE(f.pixels() > 0 && f.channels() > 0, std::string(what) + " is empty");
}

/// Row-wise KL between softened teacher and student matrices, split into
/// `segment`-wide blocks. Returns per-segment losses.
std::vector<double> segmented_kl(const Matrix& teacher, const Matrix& student, int segment,
                                 double tau_t, double tau_s, Matrix* grad) {
    std::vector<double> losses(std::size_t(teacher.rows()) * (teacher.cols() / segment));
    if (grad) *grad = Matrix(student.rows(), student.cols());
    kernels::SoftmaxKlArgs args;
    args.teacher = teacher.data();
    args.student = student.data();
    args.rows = teacher.rows();
    args.cols = teacher.cols();
    args.segment = segment;
    args.tau_teacher = tau_t;
    args.tau_student = tau_s;
    args.segment_loss = losses.data();
    args.grad_student = grad ? grad->data() : nullptr;
    kernels::softmax_kl(args);
    return losses;
}

/// X X^T for the stacked rows of `maps`.
Matrix stack(std::span<const FeatureMap> maps) {
    const int a = maps.front().pixels();
    const int c = maps.front().channels();
    Matrix x(int(maps.size()) * a, c);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        std::copy(maps[i].data.vec().begin(), maps[i].data.vec().end(), x.data() + i * a * c);
    }
    return x;
}

Matrix gram(const Matrix& x) {
    Matrix g(x.rows(), x.rows());
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, x.rows(), x.rows(), x.cols(), 1.0, x.data(),
                  x.cols(), x.data(), x.cols(), 0.0, g.data(), g.cols());
    return g;
}

} // namespace

void LossWeights::validate() const {
    check_tau(tau_cfd);
    check_tau(tau_isp2p);
    check_tau(tau_mp2p);
    RDD_REQUIRE(alpha >= 0.0 && beta >= 0.0, "loss weights must be non-negative");
}

std::vector<double> softmax_temp(std::span<const double> v, double tau) {
    check_tau(tau);
    RDD_REQUIRE(!v.empty(), "empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        RDD_REQUIRE(std::isfinite(x), "non-finite input");
        m = std::max(m, x / tau);
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) sum += out[i] = std::exp(v[i] / tau - m);
    for (double& x : out) x /= sum;
    return out;
}

double kl_divergence(std::span<const double> q, std::span<const double> p) {
    RDD_REQUIRE(q.size() == p.size(), "length mismatch " + std::to_string(q.size()) + " vs " +
                                          std::to_string(p.size()));
    double sq = 0.0;
    double sp = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        sq += q[i];
        sp += p[i];
    }
    RDD_REQUIRE(std::abs(sq - 1.0) <= 1e-5 && std::abs(sp - 1.0) <= 1e-5,
                "inputs must be probability vectors");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) kl += q[i] * std::log(q[i] / std::max(p[i], kernels::kProbFloor));
    }
    return kl;
}

double omega(double t, const NoiseSchedule& sched, OmegaRule rule) {
    const double s = sched.sigma(t);
    RDD_REQUIRE(s > 0.0, "the pixel-loss weight is undefined at t = 0");
    if (rule == OmegaRule::none) return 1.0;
    const double a = sched.alpha(t);
    return std::max(a * a / (s * s), 1.0);
}

double pd_loss(const Tensor& x_T, const Tensor& x_S, double t, const NoiseSchedule& sched, OmegaRule rule) {
    RDD_REQUIRE(x_T.shape() == x_S.shape(), "shape mismatch " + x_T.shape().str() + " vs " + x_S.shape().str());
    const double w = omega(t, sched, rule);
    double sum = 0.0;
    for (std::size_t i = 0; i < x_T.size(); ++i) {
        const double d = double(x_S[i]) - double(x_T[i]);
        sum += d * d;
    }
    return w * sum / double(x_T.size());
}

double pd_loss_batch(const Tensor& x_T, const Tensor& x_S, std::span<const double> t,
                     const NoiseSchedule& sched, OmegaRule rule, Tensor* grad_student) {
    RDD_REQUIRE(x_T.shape() == x_S.shape(), "shape mismatch " + x_T.shape().str() + " vs " + x_S.shape().str());
    const int n = x_T.shape().n;
    RDD_REQUIRE(t.size() == std::size_t(n), "expected one time per batch item");
    const std::size_t m = x_T.shape().per_item();
    if (grad_student) *grad_student = Tensor(x_S.shape());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = omega(t[i], sched, rule);
        const float* a = x_T.item(i);
        const float* b = x_S.item(i);
        double sum = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double d = double(b[k]) - double(a[k]);
            sum += d * d;
        }
        total += w * sum / double(m);
        if (grad_student) {
            float* g = grad_student->item(i);
            const double scale = 2.0 * w / (double(m) * n);
            for (std::size_t k = 0; k < m; ++k) g[k] = float(scale * (double(b[k]) - double(a[k])));
        }
    }
    return total / n;
}

double cfd_loss(std::span<const double> pooled_T, std::span<const double> pooled_S, double tau,
                std::vector<double>* grad_student) {
    check_tau(tau);
    RDD_REQUIRE(pooled_T.size() == pooled_S.size() && !pooled_T.empty(), "pooled feature dimension mismatch");
    const int c = int(pooled_T.size());
    const Matrix t(1, c, std::vector<double>(pooled_T.begin(), pooled_T.end()));
    const Matrix s(1, c, std::vector<double>(pooled_S.begin(), pooled_S.end()));
    Matrix g;
    const auto loss = segmented_kl(t, s, c, tau, 1.0, grad_student ? &g : nullptr);
    if (grad_student) *grad_student = g.vec();
    return loss[0];
}

Matrix spatial_relation(const FeatureMap& f, const FeatureMap& g) {
    check_normalized(f, "first map");
    check_normalized(g, "second map");
    RDD_REQUIRE(f.channels() == g.channels(), "channel mismatch " + std::to_string(f.channels()) + " vs " +
                                                  std::to_string(g.channels()));
    Matrix r(f.pixels(), g.pixels());
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, f.pixels(), g.pixels(), f.channels(), 1.0,
                  f.data.data(), f.channels(), g.data.data(), g.channels(), 0.0, r.data(), r.cols());
    return r;
}

double ii_p2p_loss(const Matrix& m_teacher, const Matrix& m_student, double tau, Matrix* grad_student) {
    check_tau(tau);
    RDD_REQUIRE(m_teacher.same_shape(m_student) && m_teacher.rows() > 0 && m_teacher.cols() > 0,
                "relation matrices must have equal non-empty shapes");
    const auto rows = segmented_kl(m_teacher, m_student, m_teacher.cols(), tau, tau, grad_student);
    double sum = 0.0;
    for (double v : rows) sum += v;
    const double a = m_teacher.rows();
    if (grad_student) *grad_student *= 1.0 / a;
    return sum / a;
}

double is_p2p_loss(std::span<const FeatureMap> f_teacher, std::span<const FeatureMap> f_student, double tau,
                   std::vector<Matrix>* grad_student) {
    check_tau(tau);
    RDD_REQUIRE(f_teacher.size() == f_student.size() && !f_teacher.empty(),
                "batch size mismatch " + std::to_string(f_teacher.size()) + " vs " +
                    std::to_string(f_student.size()));
    const int n = int(f_teacher.size());
    const int a = f_teacher.front().pixels();
    const int c = f_teacher.front().channels();
    for (int i = 0; i < n; ++i) {
        check_normalized(f_teacher[i], "teacher map");
        check_normalized(f_student[i], "student map");
        RDD_REQUIRE(f_teacher[i].pixels() == a && f_student[i].pixels() == a &&
                        f_teacher[i].channels() == c && f_student[i].channels() == c,
                    "all maps in a batch must share one shape");
    }

    // Block (i, j) of the stacked Gram matrix is R_ij = F_i F_j^T, so each row
    // of length N*A splits into N softmax segments of width A.
    const Matrix xs = stack(f_student);
    const Matrix gt = gram(stack(f_teacher));
    const Matrix gs = gram(xs);
    Matrix dg;
    const auto seg = segmented_kl(gt, gs, a, tau, tau, grad_student ? &dg : nullptr);

    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            for (int r = 0; r < a; ++r) sum += seg[std::size_t(i * a + r) * n + j];
        }
    }
    const double scale = 1.0 / (double(n) * n * a);

    if (grad_student) {
        dg *= scale;
        // d/dX of <dG, X X^T> = (dG + dG^T) X
        Matrix sym = dg.transposed();
        sym += dg;
        Matrix dx(xs.rows(), c);
        kernels::gemm(kernels::Trans::no, kernels::Trans::no, xs.rows(), c, xs.rows(), 1.0, sym.data(),
                      sym.cols(), xs.data(), c, 0.0, dx.data(), c);
        grad_student->assign(n, Matrix(a, c));
        for (int i = 0; i < n; ++i) {
            std::copy_n(dx.data() + std::size_t(i) * a * c, std::size_t(a) * c, (*grad_student)[i].data());
        }
    }
    return sum * scale;
}

double m_p2p_loss(const FeatureMap& f_teacher, const FeatureMap& f_student_projected, const Matrix& e,
                  double tau, Matrix* grad_student) {
    check_tau(tau);
    check_normalized(f_teacher, "teacher map");
    check_normalized(f_student_projected, "projected student map");
    RDD_REQUIRE(f_teacher.pixels() == f_student_projected.pixels() &&
                    f_teacher.channels() == f_student_projected.channels(),
                "teacher and student maps must share one shape");
    const int c = f_teacher.channels();
    RDD_REQUIRE(e.cols() == c && e.rows() > 0, "contrastive embeddings must be V x " + std::to_string(c));
    const int a = f_teacher.pixels();
    const int v = e.rows();

    Matrix pt(a, v);
    Matrix ps(a, v);
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, a, v, c, 1.0, f_teacher.data.data(), c, e.data(), c,
                  0.0, pt.data(), v);
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, a, v, c, 1.0, f_student_projected.data.data(), c,
                  e.data(), c, 0.0, ps.data(), v);
    Matrix dp;
    const auto rows = segmented_kl(pt, ps, v, tau, tau, grad_student ? &dp : nullptr);
    double sum = 0.0;
    for (double r : rows) sum += r;

    if (grad_student) {
        *grad_student = Matrix(a, c);
        kernels::gemm(kernels::Trans::no, kernels::Trans::no, a, c, v, 1.0 / a, dp.data(), v, e.data(), c, 0.0,
                      grad_student->data(), c);
    }
    return sum / a;
}

double rdd_loss(const LossComponents& c, const LossWeights& w) {
    w.validate();
    const double tol = -1e-9;
    RDD_REQUIRE(std::isfinite(c.cfd) && c.cfd >= tol, "cfd component must be finite and non-negative");
    RDD_REQUIRE(std::isfinite(c.is_p2p) && c.is_p2p >= tol, "is_p2p component must be finite and non-negative");
    double total = c.cfd + w.alpha * c.is_p2p;
    if (c.m_p2p) {
        RDD_REQUIRE(std::isfinite(*c.m_p2p) && *c.m_p2p >= tol, "m_p2p component must be finite and non-negative");
        total += w.beta * *c.m_p2p;
    }
    return total;
}

} // namespace rdd
