#include "rdd/layers.hpp"

#include <cmath>

namespace rdd::nn {

namespace {

Tensor he_normal(Shape shape, int fan_in, float gain, std::mt19937_64& rng) {
    Tensor t(shape);
    std::normal_distribution<float> dist(0.0f, gain * std::sqrt(2.0f / float(fan_in)));
    for (float& v : t.vec()) v = dist(rng);
    return t;
}

} // namespace

Conv2d::Conv2d(int in, int out, int kernel, int stride_, std::mt19937_64& rng, float gain)
    : weight(he_normal(Shape{out, in, kernel, kernel}, in * kernel * kernel, gain, rng)),
      bias(Tensor(Shape{out, 1, 1, 1})), stride(stride_), pad(kernel / 2) {}

Var Conv2d::operator()(const Var& x) const {
    // Leaves only read the parameter, the const_cast lets backward accumulate into grad.
    auto& self = const_cast<Conv2d&>(*this);
    return conv2d(x, Var::leaf(self.weight), Var::leaf(self.bias), stride, pad);
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
}

Linear::Linear(int in, int out, std::mt19937_64& rng, float gain)
    : weight(he_normal(Shape{out, in, 1, 1}, in, gain, rng)), bias(Tensor(Shape{out, 1, 1, 1})) {}

Var Linear::operator()(const Var& x) const {
    auto& self = const_cast<Linear&>(*this);
    return linear(x, Var::leaf(self.weight), Var::leaf(self.bias));
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
}

BatchNormState make_batch_norm(int channels) {
    BatchNormState bn;
    bn.gamma = Param(Tensor(Shape{channels, 1, 1, 1}, 1.0f));
    bn.beta = Param(Tensor(Shape{channels, 1, 1, 1}, 0.0f));
    bn.running_mean = Param(Tensor(Shape{channels, 1, 1, 1}, 0.0f), false);
    bn.running_var = Param(Tensor(Shape{channels, 1, 1, 1}, 1.0f), false);
    return bn;
}

void visit_batch_norm(BatchNormState& bn, const std::string& prefix, const ParamVisitor& f) {
    f(prefix + "gamma", bn.gamma);
    f(prefix + "beta", bn.beta);
    f(prefix + "running_mean", bn.running_mean);
    f(prefix + "running_var", bn.running_var);
}

} // namespace rdd::nn
