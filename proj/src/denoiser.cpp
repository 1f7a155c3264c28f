#include "rdd/denoiser.hpp"

#include "rdd/error.hpp"

#include <cmath>

namespace rdd {

using nn::Var;

Tensor time_features(std::span<const double> t, int dim) {
    RDD_REQUIRE(dim % 2 == 0 && dim >= 2, "time feature dimension must be even");
    const int half = dim / 2;
    Tensor out(Shape{int(t.size()), dim, 1, 1});
    for (std::size_t n = 0; n < t.size(); ++n) {
        float* row = out.item(int(n));
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            const double arg = 1000.0 * t[n] * freq;
            row[k] = float(std::sin(arg));
            row[half + k] = float(std::cos(arg));
        }
    }
    return out;
}

UNetDenoiser::ResBlock::ResBlock(int channels, int time_dim, std::mt19937_64& rng)
    : conv1(channels, channels, 3, 1, rng), conv2(channels, channels, 3, 1, rng, 0.5f),
      time_proj(time_dim, channels, rng) {}

Var UNetDenoiser::ResBlock::operator()(const Var& x, const Var& temb) const {
    Var h = conv1(nn::silu(x));
    h = nn::add_channel_bias(h, time_proj(nn::silu(temb)));
    h = conv2(nn::silu(h));
    return nn::add(x, h);
}

void UNetDenoiser::ResBlock::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    conv1.visit(prefix + "conv1.", f);
    conv2.visit(prefix + "conv2.", f);
    time_proj.visit(prefix + "time_proj.", f);
}

UNetDenoiser::UNetDenoiser(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    RDD_REQUIRE(spec.resolution % 2 == 0, "resolution must be even");
    RDD_REQUIRE(spec.channels > 0 && spec.image_channels > 0, "channel counts must be positive");
    std::mt19937_64 rng(seed);
    const int c = spec.channels;
    time_fc1 = nn::Linear(spec.time_dim, spec.time_dim, rng);
    time_fc2 = nn::Linear(spec.time_dim, spec.time_dim, rng);
    if (spec.num_classes > 0) {
        Tensor table(Shape{spec.num_classes, spec.time_dim, 1, 1});
        std::normal_distribution<float> dist(0.0f, 1.0f);
        for (float& v : table.vec()) v = dist(rng);
        class_embedding = nn::Param(std::move(table));
    }
    in_conv = nn::Conv2d(spec.image_channels, c, 3, 1, rng);
    block1 = ResBlock(c, spec.time_dim, rng);
    down = nn::Conv2d(c, 2 * c, 3, 2, rng);
    block2 = ResBlock(2 * c, spec.time_dim, rng);
    up = nn::Conv2d(2 * c, c, 3, 1, rng);
    merge = nn::Conv2d(2 * c, c, 3, 1, rng);
    block3 = ResBlock(c, spec.time_dim, rng);
    out_conv = nn::Conv2d(c, spec.image_channels, 3, 1, rng, 0.1f);
}

Var UNetDenoiser::forward(const Var& z, std::span<const double> t, std::span<const int> labels) const {
    const Shape zs = z.shape();
    RDD_REQUIRE(zs.c == spec_.image_channels && zs.h == spec_.resolution && zs.w == spec_.resolution,
                "input " + zs.str() + " does not match the model resolution");
    RDD_REQUIRE(t.size() == std::size_t(zs.n), "expected one time per batch item");
    if (spec_.num_classes > 0) {
        RDD_REQUIRE(labels.size() == std::size_t(zs.n), "conditional model needs one label per item");
    } else {
        RDD_REQUIRE(labels.empty(), "unconditional model does not take labels");
    }

    Var temb = time_fc2(nn::silu(time_fc1(Var::constant(time_features(t, spec_.time_dim)))));
    if (spec_.num_classes > 0) {
        auto& table = const_cast<nn::Param&>(class_embedding);
        temb = nn::add(temb, nn::embedding(Var::leaf(table), labels));
    }

    Var h1 = block1(in_conv(z), temb);
    Var h2 = block2(down(h1), temb);
    Var h = up(nn::upsample2(h2));
    h = merge(nn::concat_channels(h, h1));
    h = block3(h, temb);
    Var v = out_conv(nn::silu(h));
    if (spec_.prediction == Prediction::x) return v;

    std::vector<double> a(zs.n);
    std::vector<double> b(zs.n);
    for (int n = 0; n < zs.n; ++n) {
        a[n] = sched_.alpha(t[n]);
        b[n] = -sched_.sigma(t[n]);
    }
    return nn::per_item_axpby(a, z, b, v);
}

Tensor UNetDenoiser::denoise(const Tensor& z, std::span<const double> t,
                             std::span<const int> labels) const {
    nn::NoGradGuard guard;
    return forward(Var::constant(z), t, labels).value();
}

void UNetDenoiser::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    time_fc1.visit(prefix + "time_fc1.", f);
    time_fc2.visit(prefix + "time_fc2.", f);
    if (spec_.num_classes > 0) f(prefix + "class_embedding", class_embedding);
    in_conv.visit(prefix + "in_conv.", f);
    block1.visit(prefix + "block1.", f);
    down.visit(prefix + "down.", f);
    block2.visit(prefix + "block2.", f);
    up.visit(prefix + "up.", f);
    merge.visit(prefix + "merge.", f);
    block3.visit(prefix + "block3.", f);
    out_conv.visit(prefix + "out_conv.", f);
}

} // namespace rdd
