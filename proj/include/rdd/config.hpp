#pragma once

// Experiment configuration: INI-style text with one section per module.

#include "rdd/denoiser.hpp"
#include "rdd/features.hpp"
#include "rdd/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rdd {

struct DatasetSpec {
    std::string name = "toy"; ///< toy | cifar10 | array | images
    std::string path;         ///< unused for toy
    int resolution = 16;
    int channels = 1;
    bool conditional = false;
    int size = 4000;    ///< toy image count
    int max_images = 0; ///< 0 = all (file-backed datasets)
    std::uint64_t seed = 1;

    bool operator==(const DatasetSpec&) const = default;
};

struct EvalSpec {
    int n_samples = 1000;
    std::vector<int> steps{4, 2, 1};
    int splits = 1;
    std::uint64_t seed = 12345;

    bool operator==(const EvalSpec&) const = default;
};

struct RunSpec {
    std::string output_dir = "runs/default";
    std::string backend = "parallel"; ///< parallel | serial
    int threads = 0;                  ///< 0 = OpenMP default

    bool operator==(const RunSpec&) const = default;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    ClassifierSpec classifier;
    ClassifierConfig classifier_train;
    BaseConfig base;
    int base_steps = 64;
    DistillConfig distill = DistillConfig::desk();
    int start_steps = 8;
    int end_steps = 1;
    EvalSpec eval;
    RunSpec run;

    bool operator==(const ExperimentConfig&) const = default;

    /// Cross-field checks (resolutions agree, step counts are powers of two, ...).
    void validate() const;
};

/// Every field, one `key = value` line per field, grouped in sections.
std::string to_ini(const ExperimentConfig& cfg);

/// Parses text produced by to_ini or written by hand. Missing keys keep their
/// defaults; unknown sections or keys and malformed values throw FormatError
/// naming the source, line and field.
ExperimentConfig parse_ini(std::string_view text, const std::string& source = "<config>");

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content, in hex.
std::string content_hash(std::string_view content);

} // namespace rdd

namespace rdd {

/// Builds or loads the dataset described by `spec`.
Dataset load_dataset(const DatasetSpec& spec);

} // namespace rdd
