#pragma once

// Model (de)serialisation on top of the container format.

#include "rdd/container.hpp"
#include "rdd/denoiser.hpp"
#include "rdd/error.hpp"
#include "rdd/features.hpp"
#include "rdd/layers.hpp"

#include <filesystem>
#include <string>

namespace rdd {

template <nn::Visitable M>
void put_params(Container& c, const std::string& prefix, M& module) {
    module.visit(prefix, [&](const std::string& name, nn::Param& p) {
        const Shape s = p.value.shape();
        c.put(name, p.value.span(), {s.n, s.c, s.h, s.w});
    });
}

/// Loads every parameter of `module` from tensors named prefix + parameter name.
template <nn::Visitable M>
void get_params(const Container& c, const std::string& prefix, M& module) {
    module.visit(prefix, [&](const std::string& name, nn::Param& p) {
        auto v = c.get_f32(name);
        if (v.size() != p.value.size()) throw FormatError("tensor '" + name + "' has the wrong size");
        p.value = Tensor(p.value.shape(), std::move(v));
    });
}

nlohmann::json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierSpec& s);
ClassifierSpec classifier_spec_from_json(const nlohmann::json& j);

/// A sampler-ready denoiser: exported weights plus the step count it was trained for.
struct ModelCheckpoint {
    UNetDenoiser model;
    int steps = 0;
    nlohmann::json meta;
};

void save_model(const std::filesystem::path& path, UNetDenoiser& model, int steps,
                const nlohmann::json& extra = nlohmann::json::object());
ModelCheckpoint load_model(const std::filesystem::path& path);

void save_classifier(const std::filesystem::path& path, Classifier& model,
                     const nlohmann::json& extra = nlohmann::json::object());
Classifier load_classifier(const std::filesystem::path& path);

} // namespace rdd
