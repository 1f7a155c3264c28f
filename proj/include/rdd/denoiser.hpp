#pragma once

#include "rdd/layers.hpp"
#include "rdd/schedule.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace rdd {

/// What the network's output layer predicts.
enum class Prediction {
    v, ///< velocity alpha(t) eps - sigma(t) x, converted to a clean image
    x, ///< the clean image directly
};

/// Architecture hyperparameters of the desk-scale U-Net denoiser.
struct ModelSpec {
    int image_channels = 1;
    int resolution = 16;
    int channels = 8;
    int time_dim = 32;
    int num_classes = 0; ///< 0 = unconditional
    Prediction prediction = Prediction::v;

    bool operator==(const ModelSpec&) const = default;
};

/// Two-resolution U-Net with time (and optional class) conditioning.
///
/// By default the network predicts v = alpha(t) eps - sigma(t) x and converts
/// it to a clean-image prediction x = alpha(t) z - sigma(t) v, which is exact
/// at t = 0 and well conditioned at t = 1.
class UNetDenoiser final : public Denoiser {
  public:
    UNetDenoiser() = default;
    UNetDenoiser(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    /// Differentiable forward pass returning the clean-image prediction.
    nn::Var forward(const nn::Var& z, std::span<const double> t, std::span<const int> labels) const;

    Tensor denoise(const Tensor& z, std::span<const double> t,
                   std::span<const int> labels) const override;

    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    /// Output convolution; exposed so tests can build constant predictors.
    nn::Conv2d& output_layer() { return out_conv; }

  private:
    struct ResBlock {
        nn::Conv2d conv1;
        nn::Conv2d conv2;
        nn::Linear time_proj;

        ResBlock() = default;
        ResBlock(int channels, int time_dim, std::mt19937_64& rng);
        nn::Var operator()(const nn::Var& x, const nn::Var& temb) const;
        void visit(const std::string& prefix, const nn::ParamVisitor& f);
    };

    ModelSpec spec_;
    NoiseSchedule sched_;
    nn::Linear time_fc1;
    nn::Linear time_fc2;
    nn::Param class_embedding;
    nn::Conv2d in_conv;
    ResBlock block1;
    nn::Conv2d down;
    ResBlock block2;
    nn::Conv2d up;
    nn::Conv2d merge;
    ResBlock block3;
    nn::Conv2d out_conv;
};

/// Sinusoidal features of t, one row per item -> [N, dim, 1, 1].
Tensor time_features(std::span<const double> t, int dim);

} // namespace rdd
