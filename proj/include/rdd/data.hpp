#pragma once

// Datasets (procedural toy images, CIFAR-10 binary batches, array containers,
// PGM/PPM directories) and lossless image-grid output.

#include "rdd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rdd {

/// Images in [-1, 1], NCHW, with one integer label per image.
struct Dataset {
    std::string name;
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;

    int size() const { return images.shape().n; }
    Shape item_shape() const;
    Tensor batch(std::span<const int> indices) const { return images.gather(indices); }
    std::vector<int> batch_labels(std::span<const int> indices) const;
};

/// Procedural 4-class single-channel images: discs, horizontal bars, vertical
/// bars and hollow squares at random positions and intensities.
Dataset make_toy_dataset(int count, int resolution, std::uint64_t seed);
inline constexpr int kToyClasses = 4;

/// Reads every data_batch_*.bin (or a single .bin file) in CIFAR-10 binary layout.
Dataset load_cifar10(const std::filesystem::path& path, int max_images = 0);

void save_array_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_array_dataset(const std::filesystem::path& path);

/// Reads *.pgm / *.ppm files. Integer-named subdirectories become class labels;
/// a flat directory yields label 0 for every image.
Dataset load_image_directory(const std::filesystem::path& dir);

/// Random disjoint (train, holdout) split with `fraction` of images held out.
std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction, std::uint64_t seed);

/// Binary PGM (1 channel) or PPM (3 channels) from values in [-1, 1].
void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

/// Tiles images row-major by sample index into one PGM/PPM with `cols` columns
/// and a 1-pixel border.
void write_grid(const std::filesystem::path& path, const Tensor& images, int cols);

} // namespace rdd
