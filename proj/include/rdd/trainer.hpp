#pragma once

// Base-model training, classifier pretraining, a single distillation stage and
// the progressive halving chain.

#include "rdd/data.hpp"
#include "rdd/denoiser.hpp"
#include "rdd/features.hpp"
#include "rdd/losses.hpp"
#include "rdd/memory.hpp"
#include "rdd/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace rdd {

enum class Method { pd, cfd, rdd };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Which loss terms a distillation stage evaluates.
struct LossToggles {
    bool pixel = false;  ///< omega-weighted pixel MSE against the PD target
    bool cfd = true;     ///< pooled-feature KL
    bool is_p2p = true;  ///< intra-sample relational KL (all N^2 pairs)
    bool ii_p2p = false; ///< intra-image relational KL (i = j only), replaces is_p2p
    bool m_p2p = true;   ///< memory-based relational KL against the pixel queue

    bool operator==(const LossToggles&) const = default;
    bool any_feature() const { return cfd || is_p2p || ii_p2p || m_p2p; }
};

/// PD: pixel only. CFD: cfd only. RDD: cfd + is_p2p + m_p2p.
LossToggles method_toggles(Method m);

struct DistillConfig {
    Method method = Method::rdd;
    LossToggles losses = method_toggles(Method::rdd);
    LossWeights weights;
    /// CFD temperature per student step count; other stages use weights.tau_cfd.
    std::map<int, double> tau_cfd_stages{{4, 0.9}, {2, 1.0}, {1, 0.85}};
    int queue_capacity = 20000;
    int queue_sample = 2048;
    int queue_push = 8;
    int batch_size = 128;
    double lr = 5e-5;
    LrSchedule lr_schedule = LrSchedule::cosine;
    int warmup = 0;
    int iterations = 20000;
    int iterations_final = 40000; ///< used by the stage that ends at one step
    double ema_decay = 0.9999;
    double clip = 1.0;
    bool export_ema = true;
    bool reset_queue = true;
    std::uint64_t seed = 0;

    bool operator==(const DistillConfig&) const = default;

    void validate() const;
    double tau_cfd_for(int student_steps) const;
    int iterations_for(int student_steps) const;

    /// Full-scale CIFAR-10 settings.
    static DistillConfig full();
    /// Scaled-down settings for the 16x16 toy pipeline on a single CPU.
    static DistillConfig desk();
};

struct BaseConfig {
    int iterations = 3000;
    int batch_size = 32;
    double lr = 2e-3;
    int warmup = 100;
    LrSchedule lr_schedule = LrSchedule::cosine;
    double ema_decay = 0.999;
    double clip = 1.0;
    OmegaRule weighting = OmegaRule::truncated_snr;
    std::uint64_t seed = 0;

    bool operator==(const BaseConfig&) const = default;
    void validate() const;
};

struct ClassifierConfig {
    int iterations = 600;
    int batch_size = 64;
    double lr = 2e-3;
    double holdout = 0.2;
    std::uint64_t seed = 0;

    bool operator==(const ClassifierConfig&) const = default;
    void validate() const;
};

/// One logged distillation iteration. Components are unweighted; `total` is
/// pixel + cfd + alpha * is_p2p + beta * m_p2p over the enabled terms.
struct IterationRecord {
    std::int64_t iteration = 0;
    double total = 0.0;
    double pixel = 0.0;
    double cfd = 0.0;
    double is_p2p = 0.0;
    double m_p2p = 0.0;
    bool m_p2p_active = false;
    double lr = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
};

using MetricsSink = std::function<void(const IterationRecord&)>;

struct StageReport {
    int teacher_steps = 0;
    int student_steps = 0;
    std::vector<IterationRecord> records;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t teacher_checksum_before = 0;
    std::uint64_t teacher_checksum_after = 0;
    std::uint64_t extractor_checksum_before = 0;
    std::uint64_t extractor_checksum_after = 0;
    std::string checkpoint;

    std::vector<double> losses() const;
    /// Mean total loss over the first / last `k` iterations.
    double mean_first(std::size_t k) const;
    double mean_last(std::size_t k) const;
};

/// Owns the mutable state of one distillation stage: student, EMA copy,
/// projection head, optimiser and random streams. The queue is borrowed.
class DistillRun {
  public:
    DistillRun(const UNetDenoiser& teacher, const UNetDenoiser& student_init, int student_steps,
               const FeatureExtractor& extractor, const Dataset& data, PixelQueue& queue,
               DistillConfig cfg);
    DistillRun(const DistillRun&) = delete;
    DistillRun& operator=(const DistillRun&) = delete;

    /// Runs one iteration and returns its record. Throws Divergence on a
    /// non-finite loss.
    IterationRecord step();
    /// Runs the remaining iterations of the stage.
    StageReport run(const MetricsSink& sink = {});

    std::int64_t iteration() const { return iteration_; }
    int total_iterations() const { return total_iterations_; }
    int student_steps() const { return student_steps_; }
    double tau_cfd() const { return tau_cfd_; }
    const DistillConfig& config() const { return cfg_; }

    UNetDenoiser& student() { return *student_; }
    UNetDenoiser& ema() { return *ema_; }
    /// EMA or live weights according to the config.
    UNetDenoiser& exported() { return cfg_.export_ema ? *ema_ : *student_; }
    ProjectionHead& head() { return *head_; }
    PixelQueue& queue() { return queue_; }
    const std::vector<IterationRecord>& records() const { return records_; }

    /// Full resumable state: weights, EMA, head, Adam moments, queue, RNG
    /// streams, iteration counter and a hash of the config text.
    void save(const std::filesystem::path& path, const std::string& config_hash = {}) const;
    void load(const std::filesystem::path& path);

  private:
    const UNetDenoiser& teacher_;
    const FeatureExtractor& extractor_;
    const Dataset& data_;
    PixelQueue& queue_;
    DistillConfig cfg_;
    int student_steps_;
    int total_iterations_;
    double tau_cfd_;
    NoiseSchedule sched_;
    std::unique_ptr<UNetDenoiser> student_;
    std::unique_ptr<UNetDenoiser> ema_;
    std::unique_ptr<ProjectionHead> head_;
    std::vector<nn::Param*> params_;
    Adam opt_;
    std::mt19937_64 data_rng_;
    std::mt19937_64 queue_rng_;
    std::int64_t iteration_ = 0;
    std::vector<IterationRecord> records_;
    double elapsed_ = 0.0;
};

struct StageResult {
    UNetDenoiser model; ///< exported student
    StageReport report;
};

/// One stage: distils a 2N-step teacher into an N-step student.
StageResult distill_stage(const UNetDenoiser& teacher, const UNetDenoiser& student_init, int student_steps,
                          const FeatureExtractor& extractor, const Dataset& data, PixelQueue& queue,
                          const DistillConfig& cfg, const MetricsSink& sink = {});

/// Halves start_steps down to end_steps; each stage's exported student
/// initialises and then teaches the next. `on_stage` sees every finished stage.
std::vector<StageResult> progressive_distill(const UNetDenoiser& base, int start_steps, int end_steps,
                                             const FeatureExtractor& extractor, const Dataset& data,
                                             const DistillConfig& cfg,
                                             const std::function<void(StageResult&)>& on_stage = {},
                                             const MetricsSink& sink = {});

/// The (teacher, student) step counts of the chain, e.g. 8 -> 1 gives
/// {(8,4), (4,2), (2,1)}.
std::vector<std::pair<int, int>> stage_plan(int start_steps, int end_steps);

struct BaseResult {
    UNetDenoiser live;
    UNetDenoiser ema;
    std::vector<double> losses;
    double seconds = 0.0;
};

/// Denoising training on clean-image MSE at t ~ U(0, 1].
BaseResult train_base(const Dataset& data, const ModelSpec& spec, const BaseConfig& cfg,
                      const std::function<void(std::int64_t, double)>& on_iteration = {});

struct ClassifierResult {
    Classifier model; ///< frozen
    double holdout_accuracy = 0.0;
    std::vector<double> losses;
};

ClassifierResult pretrain_classifier(const Dataset& data, const ClassifierSpec& spec, const ClassifierConfig& cfg);

/// Fraction of images whose arg-max class matches the label.
double classifier_accuracy(const Classifier& model, const Dataset& data);

} // namespace rdd
