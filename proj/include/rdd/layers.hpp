#pragma once

#include "rdd/autograd.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace rdd::nn {

using ParamVisitor = std::function<void(const std::string& name, Param& p)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Param& p)>;

struct Conv2d {
    Param weight;
    Param bias;
    int stride = 1;
    int pad = 1;

    Conv2d() = default;
    Conv2d(int in, int out, int kernel, int stride, std::mt19937_64& rng, float gain = 1.0f);

    Var operator()(const Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
};

struct Linear {
    Param weight;
    Param bias;

    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng, float gain = 1.0f);

    Var operator()(const Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
};

BatchNormState make_batch_norm(int channels);
void visit_batch_norm(BatchNormState& bn, const std::string& prefix, const ParamVisitor& f);

/// Anything exposing `visit(prefix, ParamVisitor)`.
template <class M>
concept Visitable = requires(M& m, const ParamVisitor& f) { m.visit(std::string{}, f); };

template <Visitable M>
std::vector<Param*> collect_params(M& module, bool trainable_only = true) {
    std::vector<Param*> out;
    module.visit("", [&](const std::string&, Param& p) {
        if (!trainable_only || p.trainable) out.push_back(&p);
    });
    return out;
}

template <Visitable M>
void zero_grad(M& module) {
    module.visit("", [](const std::string&, Param& p) { p.zero_grad(); });
}

template <Visitable M>
void set_trainable(M& module, bool trainable) {
    module.visit("", [&](const std::string& name, Param& p) {
        // Normalisation buffers stay frozen regardless.
        if (name.find("running_") == std::string::npos) p.trainable = trainable;
    });
}

/// FNV-1a over every tensor's bytes in visitation order, names included.
template <Visitable M>
std::uint64_t checksum(M& module) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    module.visit("", [&](const std::string& name, Param& p) {
        mix(name.data(), name.size());
        mix(p.value.data(), p.value.size() * sizeof(float));
    });
    return h;
}

template <Visitable M>
std::size_t parameter_count(M& module) {
    std::size_t n = 0;
    module.visit("", [&](const std::string&, Param& p) {
        if (p.trainable) n += p.value.size();
    });
    return n;
}

} // namespace rdd::nn
