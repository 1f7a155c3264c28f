#include "rdd/eval.hpp"

#include "rdd/container.hpp"
#include "rdd/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>

namespace rdd {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
    }
    return e;
}

/// Eigen-decomposition of a symmetric matrix that must be PSD up to a
/// relative tolerance; tiny negative eigenvalues are clamped to zero.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw InvalidArgument(std::string(what) + ": eigendecomposition failed");
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-6 * scale) {
        throw InvalidArgument(std::string(what) + " is not positive semidefinite (eigenvalue " +
                              std::to_string(es.eigenvalues().minCoeff()) + ")");
    }
    return es;
}

} // namespace

StatsAccumulator::StatsAccumulator(int dim) : mean_(dim, 0.0), comoment_(dim, dim) {
    RDD_REQUIRE(dim > 0, "feature dimension must be positive");
}

void StatsAccumulator::add(std::span<const double> x) {
    RDD_REQUIRE(x.size() == mean_.size(), "feature dimension mismatch");
    ++count_;
    const int d = int(mean_.size());
    std::vector<double> before(d);
    for (int i = 0; i < d; ++i) {
        before[i] = x[i] - mean_[i];
        mean_[i] += before[i] / double(count_);
    }
    for (int i = 0; i < d; ++i) {
        const double after = x[i] - mean_[i];
        for (int j = 0; j < d; ++j) comoment_(j, i) += before[j] * after;
    }
}

FeatureStats StatsAccumulator::finish() const {
    RDD_REQUIRE(count_ >= 2, "statistics need at least two samples, got " + std::to_string(count_));
    FeatureStats s{mean_, comoment_, count_};
    s.cov *= 1.0 / double(count_ - 1);
    // Symmetrise the accumulated comoment against rounding.
    for (int i = 0; i < s.cov.rows(); ++i) {
        for (int j = i + 1; j < s.cov.cols(); ++j) s.cov(i, j) = s.cov(j, i) = 0.5 * (s.cov(i, j) + s.cov(j, i));
    }
    return s;
}

FeatureStats collect_stats(std::span<const std::vector<double>> features) {
    RDD_REQUIRE(features.size() >= 2, "statistics need at least two samples");
    StatsAccumulator acc(int(features.front().size()));
    for (const auto& f : features) acc.add(f);
    return acc.finish();
}

FeatureStats collect_stats(const FeatureExtractor& extractor, const Tensor& images, int batch) {
    const int n = images.shape().n;
    RDD_REQUIRE(n >= 2, "statistics need at least two images");
    StatsAccumulator acc(extractor.feature_channels());
    for (int first = 0; first < n; first += batch) {
        const int count = std::min(batch, n - first);
        const Extraction e = extract(extractor, images.slice(first, count));
        for (const auto& p : e.pooled) acc.add(p);
    }
    return acc.finish();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    RDD_REQUIRE(a.dim() == b.dim() && a.dim() > 0, "feature dimensions differ");
    const int d = a.dim();
    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const Eigen::MatrixXd sa = to_eigen(a.cov);
    const Eigen::MatrixXd sb = to_eigen(b.cov);
    const auto ea = psd_eigen(sa, "first covariance");
    psd_eigen(sb, "second covariance");
    const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
    // S_a^{1/2} S_b S_a^{1/2} is similar to S_a S_b, so their square roots share a trace.
    const auto em = psd_eigen(sqrt_a * sb * sqrt_a, "covariance product");
    const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double fd = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return std::max(fd, 0.0);
}

double inception_score(const Matrix& p, int splits) {
    RDD_REQUIRE(p.rows() >= 1 && p.cols() >= 1, "empty probability matrix");
    RDD_REQUIRE(splits >= 1 && splits <= p.rows(), "split count must lie in [1, rows]");
    for (int i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) {
            RDD_REQUIRE(v >= 0.0 && std::isfinite(v), "probabilities must be finite and non-negative");
            s += v;
        }
        RDD_REQUIRE(std::abs(s - 1.0) <= 1e-6, "row " + std::to_string(i) + " does not sum to one");
    }
    double total = 0.0;
    for (int k = 0; k < splits; ++k) {
        const int begin = int(std::int64_t(p.rows()) * k / splits);
        const int end = int(std::int64_t(p.rows()) * (k + 1) / splits);
        const int n = end - begin;
        std::vector<double> marginal(p.cols(), 0.0);
        for (int i = begin; i < end; ++i) {
            for (int j = 0; j < p.cols(); ++j) marginal[j] += p(i, j) / n;
        }
        double kl = 0.0;
        for (int i = begin; i < end; ++i) {
            for (int j = 0; j < p.cols(); ++j) {
                if (p(i, j) > 0.0) kl += p(i, j) * std::log(p(i, j) / marginal[j]);
            }
        }
        total += std::exp(kl / n);
    }
    return total / splits;
}

Tensor generate_samples(const Denoiser& model, int steps, int n, std::uint64_t seed, Shape item_shape,
                        int num_classes, int batch) {
    RDD_REQUIRE(n >= 1 && batch >= 1, "sample count and batch must be positive");
    item_shape.n = n;
    Tensor out(item_shape);
    const std::size_t m = item_shape.per_item();
    for (int first = 0; first < n; first += batch) {
        const int count = std::min(batch, n - first);
        std::vector<std::uint64_t> seeds(count);
        std::vector<int> labels;
        for (int i = 0; i < count; ++i) {
            seeds[i] = derive_seed(seed, std::uint64_t(first + i));
            if (num_classes > 0) labels.push_back((first + i) % num_classes);
        }
        const Tensor chunk = ddim_sample_batch(model, steps, seeds, item_shape, NoiseSchedule{}, labels);
        std::copy_n(chunk.data(), std::size_t(count) * m, out.item(first));
    }
    return out;
}

EvalResult evaluate_model(const Denoiser& model, int steps, int n_samples, const Classifier& classifier,
                          const FeatureStats& reference, std::uint64_t seed, Shape item_shape, int num_classes,
                          int splits) {
    RDD_REQUIRE(reference.dim() == classifier.feature_channels(),
                "reference statistics were computed with a different extractor");
    const Shape in = classifier.input_shape();
    RDD_REQUIRE(in.c == item_shape.c && in.h == item_shape.h && in.w == item_shape.w,
                "classifier input " + in.str() + " does not match the samples");
    const Tensor samples = generate_samples(model, steps, n_samples, seed, item_shape, num_classes);
    EvalResult r;
    r.samples = n_samples;
    r.steps = steps;
    r.fid = frechet_distance(collect_stats(classifier, samples), reference);
    Matrix probs(0, 0);
    std::vector<double> all;
    constexpr int kChunk = 256;
    for (int first = 0; first < n_samples; first += kChunk) {
        const Matrix p = classifier.probabilities(samples.slice(first, std::min(kChunk, n_samples - first)));
        all.insert(all.end(), p.vec().begin(), p.vec().end());
    }
    const int classes = classifier.spec().num_classes;
    r.inception_score = inception_score(Matrix(n_samples, classes, std::move(all)), splits);
    return r;
}

void save_stats(const std::filesystem::path& path, const StatsFile& s) {
    Container c("feature-stats");
    c.meta()["dataset"] = s.dataset;
    c.meta()["extractor_checksum"] = s.extractor_checksum;
    c.meta()["count"] = s.stats.count;
    const int d = s.stats.dim();
    c.put("mean", std::span<const double>(s.stats.mean), {d});
    c.put("cov", std::span<const double>(s.stats.cov.vec()), {d, d});
    c.save(path);
}

StatsFile load_stats(const std::filesystem::path& path) {
    const Container c = Container::load(path, "feature-stats");
    StatsFile s;
    try {
        s.dataset = c.meta().at("dataset").get<std::string>();
        s.extractor_checksum = c.meta().at("extractor_checksum").get<std::uint64_t>();
        s.stats.count = c.meta().at("count").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad statistics metadata: " + e.what());
    }
    s.stats.mean = c.get_f64("mean");
    const int d = int(s.stats.mean.size());
    auto cov = c.get_f64("cov");
    if (cov.size() != std::size_t(d) * d) throw FormatError(path.string() + ": covariance size mismatch");
    s.stats.cov = Matrix(d, d, std::move(cov));
    return s;
}

std::filesystem::path stats_cache_path(const std::filesystem::path& dir, const std::string& dataset,
                                       std::uint64_t extractor_checksum) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(extractor_checksum));
    return dir / ("stats-" + dataset + "-" + hex + ".rddc");
}

FeatureStats reference_stats(const std::filesystem::path& cache_dir, const std::string& dataset,
                             const FeatureExtractor& extractor, const Tensor& images) {
    const std::uint64_t sum = extractor.checksum();
    const auto path = stats_cache_path(cache_dir, dataset, sum);
    if (std::filesystem::exists(path)) {
        StatsFile s = load_stats(path);
        if (s.dataset == dataset && s.extractor_checksum == sum) return s.stats;
    }
    StatsFile s{collect_stats(extractor, images), dataset, sum};
    save_stats(path, s);
    return s.stats;
}

} // namespace rdd
