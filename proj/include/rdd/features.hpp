#pragma once

// Frozen-classifier feature extraction, l2 normalisation and the student-side
// projection head.

#include "rdd/layers.hpp"
#include "rdd/matrix.hpp"
#include "rdd/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rdd {

/// Which model produced a feature map. The pixel queue only accepts teacher maps.
enum class Origin { unspecified, teacher, student };

/// A x C spatial embeddings of one image (A = H * W, row a = pixel a).
struct FeatureMap {
    Matrix data;
    bool normalized = false;
    Origin origin = Origin::unspecified;

    int pixels() const { return data.rows(); }
    int channels() const { return data.cols(); }
};

/// Item `n` of an [N,C,H,W] tensor as an (H*W) x C map.
FeatureMap to_feature_map(const Tensor& maps, int n);
/// Inverse of to_feature_map over a batch; every map must be (h*w) x C.
Tensor from_feature_maps(std::span<const FeatureMap> maps, int h, int w);

/// Divides each non-zero row by its l2 norm. Zero rows stay zero. Idempotent.
FeatureMap l2_normalize_rows(const FeatureMap& f);

struct Extraction {
    std::vector<FeatureMap> maps;            ///< unnormalised last-conv maps
    std::vector<std::vector<double>> pooled; ///< spatial mean of each map
};

/// Interface of a frozen feature extractor tapping its last convolutional layer.
class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;

    /// Expected [1, C, H, W] image shape.
    virtual Shape input_shape() const = 0;
    virtual int feature_channels() const = 0;
    /// Differentiable last-conv map [N, C, h, w]; parameters never receive gradients.
    virtual nn::Var feature_map(const nn::Var& images) const = 0;
    virtual std::uint64_t checksum() const = 0;
};

/// Per-image maps and pooled vectors. Rejects images of the wrong resolution.
Extraction extract(const FeatureExtractor& extr, const Tensor& images);

struct ClassifierSpec {
    int image_channels = 1;
    int resolution = 16;
    int width = 8;
    int num_classes = 4;

    bool operator==(const ClassifierSpec&) const = default;
};

/// Four 3x3 conv blocks (two of them strided) followed by global average
/// pooling and a linear layer. The post-ReLU output of the fourth block is the
/// feature map used for distillation; its spatial mean is the pooled feature.
class Classifier final : public FeatureExtractor {
  public:
    Classifier() = default;
    Classifier(const ClassifierSpec& spec, std::uint64_t seed);

    const ClassifierSpec& spec() const { return spec_; }

    Shape input_shape() const override;
    int feature_channels() const override { return 4 * spec_.width; }
    nn::Var feature_map(const nn::Var& images) const override;
    std::uint64_t checksum() const override;

    nn::Var logits(const nn::Var& images) const;
    /// Softmax class probabilities, one row per image.
    Matrix probabilities(const Tensor& images) const;

    void freeze();
    bool frozen() const;
    void visit(const std::string& prefix, const nn::ParamVisitor& f);

  private:
    ClassifierSpec spec_;
    nn::Conv2d conv1;
    nn::Conv2d conv2;
    nn::Conv2d conv3;
    nn::Conv2d conv4;
    nn::Linear fc;
};

/// conv1x1 -> batch norm -> ReLU -> conv1x1, trained with the student and
/// applied only to student maps entering the memory-based relational loss.
class ProjectionHead {
  public:
    ProjectionHead() = default;
    ProjectionHead(int channels, std::uint64_t seed);
    /// Identity convolutions and unit batch-norm buffers, in inference mode.
    static ProjectionHead identity(int channels);

    int channels() const { return channels_; }
    bool training() const { return training_; }
    void set_training(bool on) { training_ = on; }

    /// [N,C,H,W] -> [N,C,H,W]; spatial shape preserved.
    nn::Var forward(const nn::Var& maps);
    void visit(const std::string& prefix, const nn::ParamVisitor& f);

  private:
    int channels_ = 0;
    bool training_ = true;
    nn::Conv2d conv1;
    nn::BatchNormState bn;
    nn::Conv2d conv2;
};

/// Runs the head on one student map and re-normalises its rows.
FeatureMap project_student(ProjectionHead& head, const FeatureMap& student);

} // namespace rdd
