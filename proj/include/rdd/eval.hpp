#pragma once

// Sample generation and desk-scale quality metrics (Frechet distance on pooled
// classifier features, Inception Score on classifier probabilities).

#include "rdd/data.hpp"
#include "rdd/features.hpp"
#include "rdd/matrix.hpp"
#include "rdd/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rdd {

struct FeatureStats {
    std::vector<double> mean;
    Matrix cov; ///< unbiased
    std::int64_t count = 0;

    int dim() const { return int(mean.size()); }
};

/// Streaming (Welford) mean / covariance accumulator; memory is O(C^2).
class StatsAccumulator {
  public:
    explicit StatsAccumulator(int dim);
    void add(std::span<const double> x);
    std::int64_t count() const { return count_; }
    /// Throws InvalidArgument with fewer than two samples.
    FeatureStats finish() const;

  private:
    std::vector<double> mean_;
    Matrix comoment_;
    std::int64_t count_ = 0;
};

FeatureStats collect_stats(std::span<const std::vector<double>> features);
/// Pooled extractor features of `images`, processed in chunks of `batch`.
FeatureStats collect_stats(const FeatureExtractor& extractor, const Tensor& images, int batch = 256);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the square-root
/// trace computed from the symmetric product S_a^{1/2} S_b S_a^{1/2}.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// exp(E_i KL(p(y|x_i) || p(y))) averaged over `splits` contiguous splits.
double inception_score(const Matrix& probabilities, int splits = 1);

struct EvalResult {
    double fid = 0.0;
    double inception_score = 0.0;
    int samples = 0;
    int steps = 0;
};

/// n samples with per-sample seeds derive_seed(seed, i). Conditional models
/// get labels i mod num_classes.
Tensor generate_samples(const Denoiser& model, int steps, int n, std::uint64_t seed, Shape item_shape,
                        int num_classes = 0, int batch = 64);

EvalResult evaluate_model(const Denoiser& model, int steps, int n_samples, const Classifier& classifier,
                          const FeatureStats& reference, std::uint64_t seed, Shape item_shape,
                          int num_classes = 0, int splits = 1);

/// On-disk reference statistics keyed by dataset name and extractor checksum.
struct StatsFile {
    FeatureStats stats;
    std::string dataset;
    std::uint64_t extractor_checksum = 0;
};

void save_stats(const std::filesystem::path& path, const StatsFile& s);
StatsFile load_stats(const std::filesystem::path& path);
std::filesystem::path stats_cache_path(const std::filesystem::path& dir, const std::string& dataset,
                                       std::uint64_t extractor_checksum);
/// Loads cached statistics when present and matching; otherwise computes and stores them.
FeatureStats reference_stats(const std::filesystem::path& cache_dir, const std::string& dataset,
                             const FeatureExtractor& extractor, const Tensor& images);

} // namespace rdd
