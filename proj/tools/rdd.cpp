// rdd: command-line driver for training, distillation, sampling and evaluation.

#include "rdd/checkpoint.hpp"
#include "rdd/config.hpp"
#include "rdd/eval.hpp"
#include "rdd/kernels.hpp"
#include "rdd/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifndef RDD_VERSION
#define RDD_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace rdd;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::string output_dir;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (!c.output_dir.empty()) cfg.run.output_dir = c.output_dir;
    return cfg;
}

void apply_runtime(const ExperimentConfig& cfg) {
    kernels::set_backend(cfg.run.backend == "serial" ? kernels::Backend::serial : kernels::Backend::parallel);
#ifdef _OPENMP
    if (cfg.run.threads > 0) omp_set_num_threads(cfg.run.threads);
#endif
}

/// Writes the resolved config, its content hash and the invocation for provenance.
void record_run(const ExperimentConfig& cfg, const std::string& command, int argc, char** argv) {
    cfg.validate();
    const fs::path dir = cfg.run.output_dir;
    fs::create_directories(dir);
    const std::string text = to_ini(cfg);
    const std::string hash = content_hash(text);
    save_config(dir / (command + ".config.ini"), cfg);
    json prov{{"command", command}, {"config_hash", hash}, {"version", RDD_VERSION}};
    prov["argv"] = json::array();
    for (int i = 0; i < argc; ++i) prov["argv"].push_back(argv[i]);
    std::ofstream(dir / (command + ".provenance.json")) << prov.dump(2) << "\n";
    std::cout << command << ": config " << hash << " -> " << dir.string() << "\n";
}

json record_json(const IterationRecord& r, int student_steps) {
    return {{"stage", std::to_string(2 * student_steps) + "to" + std::to_string(student_steps)},
            {"iteration", r.iteration},
            {"total", r.total},
            {"pixel", r.pixel},
            {"cfd", r.cfd},
            {"is_p2p", r.is_p2p},
            {"m_p2p", r.m_p2p},
            {"m_p2p_active", r.m_p2p_active},
            {"lr", r.lr},
            {"grad_norm", r.grad_norm},
            {"wall_clock", r.seconds}};
}

fs::path classifier_path(const ExperimentConfig& cfg) { return fs::path(cfg.run.output_dir) / "classifier.rddc"; }
fs::path base_path(const ExperimentConfig& cfg) {
    return fs::path(cfg.run.output_dir) / ("base-" + std::to_string(cfg.base_steps) + ".rddc");
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw Error(what + " not found: " + p.string());
}

int cmd_init_config(const std::string& out, const std::string& profile) {
    ExperimentConfig cfg;
    if (profile == "full") {
        cfg.distill = DistillConfig::full();
    } else if (profile != "desk") {
        throw InvalidArgument("unknown profile '" + profile + "' (desk or full)");
    }
    save_config(out, cfg);
    std::cout << "wrote " << out << " (" << content_hash(to_ini(cfg)) << ")\n";
    return 0;
}

int cmd_pretrain(const Common& c, int argc, char** argv) {
    const ExperimentConfig cfg = resolve(c);
    record_run(cfg, "pretrain-classifier", argc, argv);
    apply_runtime(cfg);
    const Dataset ds = load_dataset(cfg.dataset);
    ClassifierResult r = pretrain_classifier(ds, cfg.classifier, cfg.classifier_train);
    const fs::path out = classifier_path(cfg);
    save_classifier(out, r.model, {{"holdout_accuracy", r.holdout_accuracy}, {"dataset", ds.name}});
    std::cout << "holdout accuracy " << r.holdout_accuracy << " (chance " << 1.0 / ds.num_classes << ")\n"
              << "checksum " << r.model.checksum() << "\nsaved " << out.string() << "\n";
    return 0;
}

int cmd_train_base(const Common& c, int argc, char** argv) {
    const ExperimentConfig cfg = resolve(c);
    record_run(cfg, "train-base", argc, argv);
    apply_runtime(cfg);
    const Dataset ds = load_dataset(cfg.dataset);
    std::ofstream metrics(fs::path(cfg.run.output_dir) / "train-base.metrics.jsonl");
    const auto start = std::chrono::steady_clock::now();
    BaseResult r = train_base(ds, cfg.model, cfg.base, [&](std::int64_t it, double loss) {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        metrics << json{{"iteration", it}, {"loss", loss}, {"wall_clock", wall}}.dump() << "\n";
    });
    const fs::path out = base_path(cfg);
    save_model(out, r.ema, cfg.base_steps, {{"kind", "base"}, {"dataset", ds.name}});
    std::cout << "loss " << r.losses.front() << " -> " << r.losses.back() << " in " << r.seconds << "s\nsaved "
              << out.string() << "\n";
    return 0;
}

int cmd_distill(const Common& c, const std::string& method, bool no_cfd, bool no_isp2p, bool no_mp2p, bool iip2p,
                bool with_pd, std::string teacher, int start, int end, int argc, char** argv) {
    ExperimentConfig cfg = resolve(c);
    if (!method.empty()) {
        cfg.distill.method = parse_method(method);
        cfg.distill.losses = method_toggles(cfg.distill.method);
    }
    if (no_cfd) cfg.distill.losses.cfd = false;
    if (no_isp2p) cfg.distill.losses.is_p2p = false;
    if (no_mp2p) cfg.distill.losses.m_p2p = false;
    if (iip2p) {
        cfg.distill.losses.is_p2p = false;
        cfg.distill.losses.ii_p2p = true;
    }
    if (with_pd) cfg.distill.losses.pixel = true;
    if (start > 0) cfg.start_steps = start;
    if (end > 0) cfg.end_steps = end;

    const fs::path dir = fs::path(cfg.run.output_dir) / ("distill-" + to_string(cfg.distill.method));
    ExperimentConfig recorded = cfg;
    recorded.run.output_dir = dir.string();
    record_run(recorded, "distill", argc, argv);
    apply_runtime(cfg);

    const fs::path teacher_path = teacher.empty() ? base_path(cfg) : fs::path(teacher);
    require_file(teacher_path, "teacher checkpoint");
    require_file(classifier_path(cfg), "classifier checkpoint");
    ModelCheckpoint base = load_model(teacher_path);
    if (base.steps < cfg.start_steps) {
        throw InvalidArgument("teacher was trained for " + std::to_string(base.steps) +
                              " steps, fewer than start_steps " + std::to_string(cfg.start_steps));
    }
    const Classifier cls = load_classifier(classifier_path(cfg));
    const Dataset ds = load_dataset(cfg.dataset);
    const std::string hash = content_hash(to_ini(recorded));

    std::ofstream metrics(dir / "metrics.jsonl");
    int current = cfg.start_steps;
    auto sink = [&](const IterationRecord& r) { metrics << record_json(r, current / 2).dump() << "\n"; };
    auto on_stage = [&](StageResult& s) {
        const int n = s.report.student_steps;
        const fs::path out = dir / ("student-" + std::to_string(n) + ".rddc");
        save_model(out, s.model, n,
                   {{"kind", "student"},
                    {"method", to_string(cfg.distill.method)},
                    {"config_hash", hash},
                    {"teacher_steps", s.report.teacher_steps}});
        s.report.checkpoint = out.string();
        std::cout << s.report.teacher_steps << "->" << n << ": loss " << s.report.mean_first(100) << " -> "
                  << s.report.mean_last(100) << " (" << s.report.seconds << "s) saved " << out.string() << "\n";
        metrics.flush();
        current = n;
    };
    progressive_distill(base.model, cfg.start_steps, cfg.end_steps, cls, ds, cfg.distill, on_stage, sink);
    return 0;
}

int cmd_sample(const std::string& checkpoint, int steps, int n, std::uint64_t seed, const std::string& out, int cols,
               int label) {
    require_file(checkpoint, "checkpoint");
    ModelCheckpoint ck = load_model(checkpoint);
    if (steps <= 0) steps = ck.steps;
    const ModelSpec& s = ck.model.spec();
    Tensor images;
    if (label >= 0) {
        RDD_REQUIRE(s.num_classes > 0 && label < s.num_classes, "label given for an unsuitable model");
        images = Tensor(Shape{n, s.image_channels, s.resolution, s.resolution});
        for (int i = 0; i < n; ++i) {
            const Tensor one = ddim_sample(ck.model, steps, derive_seed(seed, i),
                                           Shape{1, s.image_channels, s.resolution, s.resolution}, NoiseSchedule{},
                                           label);
            std::copy(one.vec().begin(), one.vec().end(), images.item(i));
        }
    } else {
        images = generate_samples(ck.model, steps, n, seed, Shape{1, s.image_channels, s.resolution, s.resolution},
                                  s.num_classes);
    }
    write_grid(out, images, cols > 0 ? cols : std::max(1, int(std::ceil(std::sqrt(double(n))))));
    std::cout << "wrote " << n << " samples (" << steps << " steps) to " << out << "\n";
    return 0;
}

int cmd_reference_stats(const Common& c, int argc, char** argv) {
    const ExperimentConfig cfg = resolve(c);
    record_run(cfg, "reference-stats", argc, argv);
    apply_runtime(cfg);
    require_file(classifier_path(cfg), "classifier checkpoint");
    const Classifier cls = load_classifier(classifier_path(cfg));
    const Dataset ds = load_dataset(cfg.dataset);
    const fs::path cache = fs::path(cfg.run.output_dir) / "stats";
    reference_stats(cache, ds.name, cls, ds.images);
    std::cout << "stats " << stats_cache_path(cache, ds.name, cls.checksum()).string() << "\n";
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, int steps, int n_samples, std::uint64_t seed,
                 const std::string& reference) {
    const ExperimentConfig cfg = resolve(c);
    apply_runtime(cfg);
    require_file(checkpoint, "checkpoint");
    require_file(classifier_path(cfg), "classifier checkpoint");
    ModelCheckpoint ck = load_model(checkpoint);
    const Classifier cls = load_classifier(classifier_path(cfg));
    FeatureStats ref;
    std::string dataset = cfg.dataset.name;
    if (!reference.empty()) {
        StatsFile s = load_stats(reference);
        if (s.extractor_checksum != cls.checksum()) {
            throw InvalidArgument("reference statistics were computed with a different classifier");
        }
        ref = s.stats;
        dataset = s.dataset;
    } else {
        const Dataset ds = load_dataset(cfg.dataset);
        ref = reference_stats(fs::path(cfg.run.output_dir) / "stats", ds.name, cls, ds.images);
    }
    if (steps <= 0) steps = ck.steps;
    if (n_samples <= 0) n_samples = cfg.eval.n_samples;
    const ModelSpec& s = ck.model.spec();
    const EvalResult r = evaluate_model(ck.model, steps, n_samples, cls, ref, seed,
                                        Shape{1, s.image_channels, s.resolution, s.resolution}, s.num_classes,
                                        cfg.eval.splits);
    const json rec{{"checkpoint", checkpoint}, {"steps", steps},         {"samples", n_samples},
                   {"seed", seed},             {"dataset", dataset},     {"fid", r.fid},
                   {"inception_score", r.inception_score}};
    fs::create_directories(cfg.run.output_dir);
    std::ofstream(fs::path(cfg.run.output_dir) / "evaluate.metrics.jsonl", std::ios::app) << rec.dump() << "\n";
    std::cout << rec.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Relational diffusion distillation toolkit"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Experiment config file")->check(CLI::ExistingFile);
        sub->add_option("--output-dir", common.output_dir, "Override [run] output_dir");
    };

    std::string init_out = "experiment.ini";
    std::string profile = "desk";
    auto* init = app.add_subcommand("init-config", "Write a config file with every key at its default");
    init->add_option("--out", init_out, "Destination file");
    init->add_option("--profile", profile, "desk or full distillation defaults");

    auto* pre = app.add_subcommand("pretrain-classifier", "Train the feature-extractor classifier");
    add_common(pre);
    auto* base = app.add_subcommand("train-base", "Train the many-step base denoiser");
    add_common(base);

    std::string method;
    bool no_cfd = false, no_isp2p = false, no_mp2p = false, iip2p = false, with_pd = false;
    std::string teacher;
    int start = 0, end = 0;
    auto* dist = app.add_subcommand("distill", "Progressively distil the base model");
    add_common(dist);
    dist->add_option("--method", method, "pd, cfd or rdd")->check(CLI::IsMember({"pd", "cfd", "rdd"}));
    dist->add_flag("--no-cfd", no_cfd, "Disable the pooled-feature KL term");
    dist->add_flag("--no-isp2p", no_isp2p, "Disable the intra-sample relational term");
    dist->add_flag("--no-mp2p", no_mp2p, "Disable the memory-based relational term");
    dist->add_flag("--iip2p", iip2p, "Use the intra-image relational term instead of the intra-sample one");
    dist->add_flag("--with-pd", with_pd, "Add the weighted pixel loss to the feature losses");
    dist->add_option("--teacher", teacher, "Teacher checkpoint (default: the base model)");
    dist->add_option("--start-steps", start, "Override [distill] start_steps");
    dist->add_option("--end-steps", end, "Override [distill] end_steps");

    std::string checkpoint;
    int steps = 0;
    int n = 16;
    std::uint64_t seed = 0;
    std::string out = "samples.pgm";
    int cols = 0;
    int label = -1;
    auto* sample = app.add_subcommand("sample", "Write a grid of samples from a checkpoint");
    sample->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    sample->add_option("--steps", steps, "Sampling steps (default: the checkpoint's)");
    sample->add_option("-n,--count", n, "Number of samples");
    sample->add_option("--seed", seed, "Base seed");
    sample->add_option("--out", out, "Output .pgm/.ppm file");
    sample->add_option("--cols", cols, "Grid columns");
    sample->add_option("--label", label, "Class label for conditional models");

    int n_samples = 0;
    std::string reference;
    auto* evaluate = app.add_subcommand("evaluate", "FID and Inception Score of a checkpoint");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    evaluate->add_option("--steps", steps, "Sampling steps (default: the checkpoint's)");
    evaluate->add_option("--n-samples", n_samples, "Samples (default: [eval] n_samples)");
    evaluate->add_option("--seed", seed, "Base seed");
    evaluate->add_option("--reference", reference, "Cached reference statistics");

    auto* refstats = app.add_subcommand("reference-stats", "Compute and cache dataset feature statistics");
    add_common(refstats);

    CLI11_PARSE(app, argc, argv);
    try {
        if (init->parsed()) return cmd_init_config(init_out, profile);
        if (pre->parsed()) return cmd_pretrain(common, argc, argv);
        if (base->parsed()) return cmd_train_base(common, argc, argv);
        if (dist->parsed()) {
            return cmd_distill(common, method, no_cfd, no_isp2p, no_mp2p, iip2p, with_pd, teacher, start, end, argc,
                               argv);
        }
        if (sample->parsed()) return cmd_sample(checkpoint, steps, n, seed, out, cols, label);
        if (evaluate->parsed()) return cmd_evaluate(common, checkpoint, steps, n_samples, seed, reference);
        if (refstats->parsed()) return cmd_reference_stats(common, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
