#include "rdd/features.hpp"

#include "rdd/error.hpp"

#include <cmath>

namespace rdd {

using nn::Var;

FeatureMap to_feature_map(const Tensor& maps, int n) {
    const Shape s = maps.shape();
    RDD_REQUIRE(n >= 0 && n < s.n, "item index out of range");
    const int a = s.spatial();
    FeatureMap f{Matrix(a, s.c), false, Origin::unspecified};
    const float* src = maps.item(n);
    for (int c = 0; c < s.c; ++c) {
        for (int p = 0; p < a; ++p) f.data(p, c) = src[std::size_t(c) * a + p];
    }
    return f;
}

Tensor from_feature_maps(std::span<const FeatureMap> maps, int h, int w) {
    RDD_REQUIRE(!maps.empty(), "no feature maps");
    const int channels = maps.front().channels();
    Tensor out(Shape{int(maps.size()), channels, h, w});
    const int a = h * w;
    for (std::size_t n = 0; n < maps.size(); ++n) {
        RDD_REQUIRE(maps[n].pixels() == a && maps[n].channels() == channels,
                    "feature map shape does not match the requested layout");
        float* dst = out.item(int(n));
        for (int c = 0; c < channels; ++c) {
            for (int p = 0; p < a; ++p) dst[std::size_t(c) * a + p] = float(maps[n].data(p, c));
        }
    }
    return out;
}

FeatureMap l2_normalize_rows(const FeatureMap& f) {
    FeatureMap out = f;
    for (int r = 0; r < out.data.rows(); ++r) {
        auto row = out.data.row(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > 0.0) {
            for (double& v : row) v /= norm;
        }
    }
    out.normalized = true;
    return out;
}

Extraction extract(const FeatureExtractor& extr, const Tensor& images) {
    const Shape expected = extr.input_shape();
    const Shape got = images.shape();
    RDD_REQUIRE(got.c == expected.c && got.h == expected.h && got.w == expected.w,
                "images " + got.str() + " do not match extractor input " + expected.str());
    nn::NoGradGuard guard;
    const Tensor maps = extr.feature_map(Var::constant(images)).value();
    Extraction out;
    out.maps.reserve(got.n);
    out.pooled.reserve(got.n);
    for (int n = 0; n < got.n; ++n) {
        FeatureMap f = to_feature_map(maps, n);
        std::vector<double> pooled(f.channels(), 0.0);
        for (int p = 0; p < f.pixels(); ++p) {
            for (int c = 0; c < f.channels(); ++c) pooled[c] += f.data(p, c);
        }
        for (double& v : pooled) v /= f.pixels();
        out.maps.push_back(std::move(f));
        out.pooled.push_back(std::move(pooled));
    }
    return out;
}

Classifier::Classifier(const ClassifierSpec& spec, std::uint64_t seed) : spec_(spec) {
    RDD_REQUIRE(spec.resolution % 4 == 0, "classifier resolution must be divisible by 4");
    RDD_REQUIRE(spec.num_classes >= 2, "classifier needs at least two classes");
    std::mt19937_64 rng(seed);
    const int w = spec.width;
    conv1 = nn::Conv2d(spec.image_channels, w, 3, 1, rng);
    conv2 = nn::Conv2d(w, 2 * w, 3, 2, rng);
    conv3 = nn::Conv2d(2 * w, 2 * w, 3, 1, rng);
    conv4 = nn::Conv2d(2 * w, 4 * w, 3, 2, rng);
    fc = nn::Linear(4 * w, spec.num_classes, rng);
}

Shape Classifier::input_shape() const {
    return Shape{1, spec_.image_channels, spec_.resolution, spec_.resolution};
}

Var Classifier::feature_map(const Var& images) const {
    const Shape s = images.shape();
    RDD_REQUIRE(s.c == spec_.image_channels && s.h == spec_.resolution && s.w == spec_.resolution,
                "images " + s.str() + " do not match classifier input " + input_shape().str());
    Var h = nn::relu(conv1(images));
    h = nn::relu(conv2(h));
    h = nn::relu(conv3(h));
    return nn::relu(conv4(h));
}

Var Classifier::logits(const Var& images) const {
    return fc(nn::global_avg_pool(feature_map(images)));
}

Matrix Classifier::probabilities(const Tensor& images) const {
    nn::NoGradGuard guard;
    const Tensor z = logits(Var::constant(images)).value();
    const int n = z.shape().n;
    const int k = z.shape().c;
    Matrix p(n, k);
    for (int i = 0; i < n; ++i) {
        double m = -1e300;
        for (int j = 0; j < k; ++j) m = std::max(m, double(z[std::size_t(i) * k + j]));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += p(i, j) = std::exp(z[std::size_t(i) * k + j] - m);
        for (int j = 0; j < k; ++j) p(i, j) /= sum;
    }
    return p;
}

std::uint64_t Classifier::checksum() const {
    return nn::checksum(const_cast<Classifier&>(*this));
}

void Classifier::freeze() { nn::set_trainable(*this, false); }

bool Classifier::frozen() const {
    bool any = false;
    const_cast<Classifier&>(*this).visit("", [&](const std::string&, nn::Param& p) { any |= p.trainable; });
    return !any;
}

void Classifier::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    conv1.visit(prefix + "conv1.", f);
    conv2.visit(prefix + "conv2.", f);
    conv3.visit(prefix + "conv3.", f);
    conv4.visit(prefix + "conv4.", f);
    fc.visit(prefix + "fc.", f);
}

ProjectionHead::ProjectionHead(int channels, std::uint64_t seed) : channels_(channels) {
    RDD_REQUIRE(channels > 0, "projection head needs positive channels");
    std::mt19937_64 rng(seed);
    conv1 = nn::Conv2d(channels, channels, 1, 1, rng);
    bn = nn::make_batch_norm(channels);
    conv2 = nn::Conv2d(channels, channels, 1, 1, rng);
}

ProjectionHead ProjectionHead::identity(int channels) {
    ProjectionHead h(channels, 0);
    for (nn::Conv2d* conv : {&h.conv1, &h.conv2}) {
        conv->weight.value.fill(0.0f);
        for (int c = 0; c < channels; ++c) conv->weight.value.at(c, c, 0, 0) = 1.0f;
        conv->bias.value.fill(0.0f);
    }
    h.training_ = false;
    return h;
}

Var ProjectionHead::forward(const Var& maps) {
    RDD_REQUIRE(maps.shape().c == channels_, "projection head expects " + std::to_string(channels_) +
                                                 " channels, got " + std::to_string(maps.shape().c));
    Var h = conv1(maps);
    h = nn::batch_norm(h, bn, training_);
    h = nn::relu(h);
    return conv2(h);
}

void ProjectionHead::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    conv1.visit(prefix + "conv1.", f);
    nn::visit_batch_norm(bn, prefix + "bn.", f);
    conv2.visit(prefix + "conv2.", f);
}

FeatureMap project_student(ProjectionHead& head, const FeatureMap& student) {
    RDD_REQUIRE(student.channels() == head.channels(), "channel mismatch between map and head");
    const FeatureMap one[] = {student};
    nn::NoGradGuard guard;
    const Tensor in = from_feature_maps(one, student.pixels(), 1);
    const Tensor out = nn::l2_normalize_channels(head.forward(Var::constant(in))).value();
    FeatureMap f = to_feature_map(out, 0);
    f.normalized = true;
    f.origin = Origin::student;
    return f;
}

} // namespace rdd
