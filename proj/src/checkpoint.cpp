#include "rdd/checkpoint.hpp"

#include "rdd/error.hpp"

namespace rdd {

nlohmann::json to_json(const ModelSpec& s) {
    return {{"image_channels", s.image_channels}, {"resolution", s.resolution}, {"channels", s.channels},
            {"time_dim", s.time_dim},             {"num_classes", s.num_classes},
            {"prediction", s.prediction == Prediction::v ? "v" : "x"}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.image_channels = j.at("image_channels").get<int>();
    s.resolution = j.at("resolution").get<int>();
    s.channels = j.at("channels").get<int>();
    s.time_dim = j.at("time_dim").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.prediction = j.value("prediction", std::string("v")) == "x" ? Prediction::x : Prediction::v;
    return s;
}

nlohmann::json to_json(const ClassifierSpec& s) {
    return {{"image_channels", s.image_channels}, {"resolution", s.resolution}, {"width", s.width},
            {"num_classes", s.num_classes}};
}

ClassifierSpec classifier_spec_from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    s.image_channels = j.at("image_channels").get<int>();
    s.resolution = j.at("resolution").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    return s;
}

void save_model(const std::filesystem::path& path, UNetDenoiser& model, int steps, const nlohmann::json& extra) {
    Container c("denoiser");
    c.meta() = extra;
    c.meta()["spec"] = to_json(model.spec());
    c.meta()["steps"] = steps;
    c.meta()["schedule"] = "cosine";
    put_params(c, "model.", model);
    c.save(path);
}

ModelCheckpoint load_model(const std::filesystem::path& path) {
    const Container c = Container::load(path, "denoiser");
    ModelCheckpoint ck;
    try {
        ck.model = UNetDenoiser(model_spec_from_json(c.meta().at("spec")), 0);
        ck.steps = c.meta().at("steps").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad model metadata: " + e.what());
    }
    get_params(c, "model.", ck.model);
    ck.meta = c.meta();
    return ck;
}

void save_classifier(const std::filesystem::path& path, Classifier& model, const nlohmann::json& extra) {
    Container c("classifier");
    c.meta() = extra;
    c.meta()["spec"] = to_json(model.spec());
    put_params(c, "model.", model);
    c.save(path);
}

Classifier load_classifier(const std::filesystem::path& path) {
    const Container c = Container::load(path, "classifier");
    Classifier model;
    try {
        model = Classifier(classifier_spec_from_json(c.meta().at("spec")), 0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad classifier metadata: " + e.what());
    }
    get_params(c, "model.", model);
    model.freeze();
    return model;
}

} // namespace rdd
