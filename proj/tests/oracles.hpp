#pragma once

// Naive-loop reference implementations and random-instance generators shared
// by the unit tests and the acceptance harness. Everything here is written
// directly from the definitions, without the stacked/vectorised tricks used
// by the library.

#include "rdd/features.hpp"
#include "rdd/matrix.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using rdd::FeatureMap;
using rdd::Matrix;

inline std::vector<double> softmax(const std::vector<double>& v, double tau) {
    double m = v[0] / tau;
    for (double x : v) m = std::max(m, x / tau);
    std::vector<double> p(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        p[i] = std::exp(v[i] / tau - m);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

inline double kl(const std::vector<double>& q, const std::vector<double>& p) {
    double r = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) r += q[i] * std::log(q[i] / std::max(p[i], 1e-12));
    }
    return r;
}

inline std::vector<double> row(const Matrix& m, int r) {
    return std::vector<double>(m.row(r).begin(), m.row(r).end());
}

inline double dot_rows(const Matrix& a, int i, const Matrix& b, int j) {
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
    return s;
}

inline Matrix relation(const Matrix& f, const Matrix& g) {
    Matrix r(f.rows(), g.rows());
    for (int i = 0; i < f.rows(); ++i) {
        for (int j = 0; j < g.rows(); ++j) r(i, j) = dot_rows(f, i, g, j);
    }
    return r;
}

inline double ii_p2p(const Matrix& mt, const Matrix& ms, double tau) {
    double s = 0.0;
    for (int a = 0; a < mt.rows(); ++a) s += kl(softmax(row(mt, a), tau), softmax(row(ms, a), tau));
    return s / mt.rows();
}

/// Quadruple loop: pairs (i, j), anchor pixel a, contrastive pixel b.
inline double is_p2p(const std::vector<FeatureMap>& ft, const std::vector<FeatureMap>& fs, double tau) {
    const int n = int(ft.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int a_count = ft[i].pixels();
            double pair = 0.0;
            for (int a = 0; a < a_count; ++a) {
                std::vector<double> rt(a_count);
                std::vector<double> rs(a_count);
                for (int b = 0; b < a_count; ++b) {
                    rt[b] = dot_rows(ft[i].data, a, ft[j].data, b);
                    rs[b] = dot_rows(fs[i].data, a, fs[j].data, b);
                }
                pair += kl(softmax(rt, tau), softmax(rs, tau));
            }
            total += pair / a_count;
        }
    }
    return total / (double(n) * n);
}

inline double m_p2p(const FeatureMap& ft, const FeatureMap& fs, const Matrix& e, double tau) {
    double s = 0.0;
    for (int a = 0; a < ft.pixels(); ++a) {
        std::vector<double> pt(e.rows());
        std::vector<double> ps(e.rows());
        for (int v = 0; v < e.rows(); ++v) {
            pt[v] = dot_rows(ft.data, a, e, v);
            ps[v] = dot_rows(fs.data, a, e, v);
        }
        s += kl(softmax(pt, tau), softmax(ps, tau));
    }
    return s / ft.pixels();
}

inline double cfd(const std::vector<double>& pt, const std::vector<double>& ps, double tau) {
    return kl(softmax(pt, tau), softmax(ps, 1.0));
}

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.vec()) v = normal(rng);
    return m;
}

inline Matrix normalized_rows(Matrix m) {
    for (int r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double v : m.row(r)) s += v * v;
        s = std::sqrt(s);
        for (double& v : m.row(r)) v /= s;
    }
    return m;
}

inline FeatureMap random_map(int a, int c, std::mt19937_64& rng, rdd::Origin origin = rdd::Origin::unspecified) {
    return FeatureMap{normalized_rows(random_matrix(a, c, rng)), true, origin};
}

inline std::vector<FeatureMap> random_batch(int n, int a, int c, std::mt19937_64& rng,
                                            rdd::Origin origin = rdd::Origin::unspecified) {
    std::vector<FeatureMap> out;
    for (int i = 0; i < n; ++i) out.push_back(random_map(a, c, rng, origin));
    return out;
}

/// Central finite difference of `f` with respect to every entry of `x`.
template <class F>
std::vector<double> central_difference(std::vector<double>& x, F&& f, double h = 1e-4) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|b|_inf, floor): relative to the gradient's scale.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double scale = floor;
    for (double v : b) scale = std::max(scale, std::abs(v));
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    return err / scale;
}

/// Two-pass mean and unbiased covariance.
inline std::pair<std::vector<double>, Matrix> mean_cov(const std::vector<std::vector<double>>& xs) {
    const int d = int(xs[0].size());
    std::vector<double> mu(d, 0.0);
    for (const auto& x : xs) {
        for (int i = 0; i < d; ++i) mu[i] += x[i];
    }
    for (double& v : mu) v /= double(xs.size());
    Matrix cov(d, d);
    for (const auto& x : xs) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) cov(i, j) += (x[i] - mu[i]) * (x[j] - mu[j]);
        }
    }
    cov *= 1.0 / double(xs.size() - 1);
    return {mu, cov};
}

inline double inception_score(const Matrix& p) {
    std::vector<double> marginal(p.cols(), 0.0);
    for (int i = 0; i < p.rows(); ++i) {
        for (int j = 0; j < p.cols(); ++j) marginal[j] += p(i, j) / p.rows();
    }
    double s = 0.0;
    for (int i = 0; i < p.rows(); ++i) {
        for (int j = 0; j < p.cols(); ++j) {
            if (p(i, j) > 0.0) s += p(i, j) * std::log(p(i, j) / marginal[j]);
        }
    }
    return std::exp(s / p.rows());
}

} // namespace oracle
