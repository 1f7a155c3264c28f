#include "rdd/trainer.hpp"

#include "rdd/checkpoint.hpp"
#include "rdd/container.hpp"
#include "rdd/error.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rdd {

using nn::Var;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<int> draw_indices(int batch, int size, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, size - 1);
    std::vector<int> idx(batch);
    for (int& i : idx) i = pick(rng);
    return idx;
}

Tensor draw_normal(Shape s, std::mt19937_64& rng) {
    Tensor eps(s);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : eps.vec()) v = normal(rng);
    return eps;
}

/// Row-normalised feature maps of every item of an [N,C,H,W] tensor.
std::vector<FeatureMap> normalized_maps(const Tensor& maps, Origin origin, bool already_normalized) {
    std::vector<FeatureMap> out;
    out.reserve(maps.shape().n);
    for (int n = 0; n < maps.shape().n; ++n) {
        FeatureMap f = to_feature_map(maps, n);
        if (!already_normalized) f = l2_normalize_rows(f);
        f.normalized = true;
        f.origin = origin;
        out.push_back(std::move(f));
    }
    return out;
}

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw FormatError("corrupt random-number-generator state");
}

template <nn::Visitable M>
std::vector<nn::Param*> trainable(M& m) {
    return nn::collect_params(m, true);
}

/// Softmax cross-entropy over [N,L,1,1] logits; writes d loss / d logits.
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor& grad) {
    const int n = logits.shape().n;
    const int l = logits.shape().c;
    grad = Tensor(logits.shape());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* z = logits.item(i);
        double m = z[0];
        for (int j = 1; j < l; ++j) m = std::max(m, double(z[j]));
        double sum = 0.0;
        for (int j = 0; j < l; ++j) sum += std::exp(z[j] - m);
        const double lse = m + std::log(sum);
        total += lse - z[labels[i]];
        float* g = grad.item(i);
        for (int j = 0; j < l; ++j) {
            const double p = std::exp(z[j] - lse);
            g[j] = float((p - (j == labels[i] ? 1.0 : 0.0)) / n);
        }
    }
    return total / n;
}

} // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::pd: return "pd";
    case Method::cfd: return "cfd";
    case Method::rdd: return "rdd";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    if (s == "pd") return Method::pd;
    if (s == "cfd") return Method::cfd;
    if (s == "rdd") return Method::rdd;
    throw InvalidArgument("unknown method '" + s + "' (expected pd, cfd or rdd)");
}

LossToggles method_toggles(Method m) {
    switch (m) {
    case Method::pd: return {true, false, false, false, false};
    case Method::cfd: return {false, true, false, false, false};
    case Method::rdd: return {false, true, true, false, true};
    }
    return {};
}

void DistillConfig::validate() const {
    weights.validate();
    RDD_REQUIRE(!(losses.is_p2p && losses.ii_p2p), "is_p2p and ii_p2p are mutually exclusive");
    RDD_REQUIRE(losses.pixel || losses.any_feature(), "at least one loss term must be enabled");
    RDD_REQUIRE(iterations > 0 && iterations_final > 0, "iterations must be positive");
    RDD_REQUIRE(batch_size >= 2, "batch size must be at least 2");
    RDD_REQUIRE(lr > 0.0 && warmup >= 0, "invalid learning-rate settings");
    RDD_REQUIRE(ema_decay >= 0.0 && ema_decay < 1.0, "EMA decay must lie in [0, 1)");
    RDD_REQUIRE(clip > 0.0, "clip norm must be positive");
    RDD_REQUIRE(queue_capacity > 0 && queue_sample > 0 && queue_push > 0, "queue sizes must be positive");
    RDD_REQUIRE(queue_sample <= queue_capacity, "queue sample size exceeds its capacity");
    RDD_REQUIRE(queue_push <= queue_capacity, "queue push size exceeds its capacity");
    for (const auto& [steps, tau] : tau_cfd_stages) {
        RDD_REQUIRE(steps >= 1 && tau > 0.0, "invalid per-stage CFD temperature");
    }
}

double DistillConfig::tau_cfd_for(int student_steps) const {
    const auto it = tau_cfd_stages.find(student_steps);
    return it == tau_cfd_stages.end() ? weights.tau_cfd : it->second;
}

int DistillConfig::iterations_for(int student_steps) const {
    return student_steps == 1 ? iterations_final : iterations;
}

DistillConfig DistillConfig::full() { return DistillConfig{}; }

DistillConfig DistillConfig::desk() {
    DistillConfig c;
    c.queue_capacity = 4096;
    c.queue_sample = 512;
    c.queue_push = 4;
    c.batch_size = 16;
    c.lr = 3e-4;
    c.warmup = 20;
    c.iterations = 400;
    c.iterations_final = 600;
    c.ema_decay = 0.99;
    return c;
}

void BaseConfig::validate() const {
    RDD_REQUIRE(iterations > 0 && batch_size >= 1, "iterations and batch size must be positive");
    RDD_REQUIRE(lr > 0.0 && warmup >= 0, "invalid learning-rate settings");
    RDD_REQUIRE(ema_decay >= 0.0 && ema_decay < 1.0, "EMA decay must lie in [0, 1)");
    RDD_REQUIRE(clip > 0.0, "clip norm must be positive");
}

void ClassifierConfig::validate() const {
    RDD_REQUIRE(iterations > 0 && batch_size >= 1, "iterations and batch size must be positive");
    RDD_REQUIRE(lr > 0.0, "learning rate must be positive");
    RDD_REQUIRE(holdout > 0.0 && holdout < 1.0, "holdout fraction must lie in (0, 1)");
}

std::vector<double> StageReport::losses() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.total);
    return out;
}

double StageReport::mean_first(std::size_t k) const {
    RDD_REQUIRE(!records.empty(), "empty report");
    k = std::min(k, records.size());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += records[i].total;
    return s / double(k);
}

double StageReport::mean_last(std::size_t k) const {
    RDD_REQUIRE(!records.empty(), "empty report");
    k = std::min(k, records.size());
    double s = 0.0;
    for (std::size_t i = records.size() - k; i < records.size(); ++i) s += records[i].total;
    return s / double(k);
}

DistillRun::DistillRun(const UNetDenoiser& teacher, const UNetDenoiser& student_init, int student_steps,
                       const FeatureExtractor& extractor, const Dataset& data, PixelQueue& queue,
                       DistillConfig cfg)
    : teacher_(teacher), extractor_(extractor), data_(data), queue_(queue), cfg_(std::move(cfg)),
      student_steps_(student_steps) {
    cfg_.validate();
    RDD_REQUIRE(student_steps >= 1, "student step count must be positive");
    RDD_REQUIRE(data.size() > 0, "dataset is empty");
    RDD_REQUIRE(teacher.spec() == student_init.spec(), "teacher and student architectures differ");
    const Shape item = data.item_shape();
    const ModelSpec& spec = teacher.spec();
    RDD_REQUIRE(item.c == spec.image_channels && item.h == spec.resolution && item.w == spec.resolution,
                "dataset images " + item.str() + " do not match the model");
    if (cfg_.losses.any_feature()) {
        const Shape in = extractor.input_shape();
        RDD_REQUIRE(in.c == item.c && in.h == item.h && in.w == item.w,
                    "extractor input " + in.str() + " does not match the images");
    }
    if (cfg_.losses.m_p2p) {
        RDD_REQUIRE(queue.dim() == extractor.feature_channels(),
                    "queue dimension " + std::to_string(queue.dim()) + " does not match extractor channels " +
                        std::to_string(extractor.feature_channels()));
    }
    total_iterations_ = cfg_.iterations_for(student_steps);
    tau_cfd_ = cfg_.tau_cfd_for(student_steps);

    student_ = std::make_unique<UNetDenoiser>(student_init);
    nn::set_trainable(*student_, true);
    ema_ = std::make_unique<UNetDenoiser>(student_init);
    nn::set_trainable(*ema_, false);
    head_ = std::make_unique<ProjectionHead>(std::max(1, extractor.feature_channels()), derive_seed(cfg_.seed, 3));
    params_ = trainable(*student_);
    for (nn::Param* p : trainable(*head_)) params_.push_back(p);
    opt_ = Adam(params_);
    data_rng_.seed(derive_seed(cfg_.seed, 1));
    queue_rng_.seed(derive_seed(cfg_.seed, 2));
}

IterationRecord DistillRun::step() {
    const auto start = Clock::now();
    const int batch = cfg_.batch_size;
    const int steps = student_steps_;
    const LossToggles& on = cfg_.losses;
    const LossWeights& w = cfg_.weights;

    const std::vector<int> idx = draw_indices(batch, data_.size(), data_rng_);
    const Tensor x = data_.batch(idx);
    std::vector<int> labels;
    if (student_->spec().num_classes > 0) labels = data_.batch_labels(idx);
    std::uniform_int_distribution<int> grid(1, steps);
    std::vector<double> t(batch);
    for (double& ti : t) ti = double(grid(data_rng_)) / steps;
    const Tensor eps = draw_normal(x.shape(), data_rng_);
    const Tensor z = forward_diffuse(x, t, eps, sched_);

    const Tensor x_teacher = pd_teacher_target(teacher_, z, t, steps, sched_, labels);
    const Var x_student = student_->forward(Var::constant(z), t, labels);

    IterationRecord rec;
    rec.iteration = iteration_;
    std::vector<std::pair<Var, Tensor>> seeds;

    if (on.pixel) {
        Tensor g;
        rec.pixel = pd_loss_batch(x_teacher, x_student.value(), t, sched_, w.omega_clip, &g);
        seeds.emplace_back(x_student, std::move(g));
    }

    std::vector<FeatureMap> teacher_maps;
    if (on.any_feature()) {
        Tensor map_t;
        {
            nn::NoGradGuard guard;
            map_t = extractor_.feature_map(Var::constant(x_teacher)).value();
        }
        const Var map_s = extractor_.feature_map(x_student);
        const Shape ms = map_s.shape();
        const int channels = ms.c;
        const int area = ms.spatial();

        if (on.cfd) {
            const Var pooled_s = nn::global_avg_pool(map_s);
            Tensor g(pooled_s.shape());
            double sum = 0.0;
            for (int n = 0; n < batch; ++n) {
                std::vector<double> pt(channels, 0.0);
                std::vector<double> ps(channels);
                const float* mt = map_t.item(n);
                for (int c = 0; c < channels; ++c) {
                    double s = 0.0;
                    for (int a = 0; a < area; ++a) s += mt[std::size_t(c) * area + a];
                    pt[c] = s / area;
                    ps[c] = pooled_s.value().item(n)[c];
                }
                std::vector<double> gi;
                sum += cfd_loss(pt, ps, tau_cfd_, &gi);
                for (int c = 0; c < channels; ++c) g.item(n)[c] = float(gi[c] / batch);
            }
            rec.cfd = sum / batch;
            seeds.emplace_back(pooled_s, std::move(g));
        }

        if (on.is_p2p || on.ii_p2p || on.m_p2p) {
            teacher_maps = normalized_maps(map_t, Origin::teacher, false);
            const Var norm_s = nn::l2_normalize_channels(map_s);
            const std::vector<FeatureMap> student_maps = normalized_maps(norm_s.value(), Origin::student, true);

            if (on.is_p2p || on.ii_p2p) {
                std::vector<Matrix> grads;
                if (on.is_p2p) {
                    rec.is_p2p = is_p2p_loss(teacher_maps, student_maps, w.tau_isp2p, &grads);
                } else {
                    grads.resize(batch);
                    double sum = 0.0;
                    for (int n = 0; n < batch; ++n) {
                        std::vector<Matrix> gi;
                        sum += is_p2p_loss(std::span(&teacher_maps[n], 1), std::span(&student_maps[n], 1),
                                           w.tau_isp2p, &gi);
                        grads[n] = std::move(gi[0]);
                        grads[n] *= 1.0 / batch;
                    }
                    rec.is_p2p = sum / batch;
                }
                if (w.alpha > 0.0) {
                    std::vector<FeatureMap> gm(batch);
                    for (int n = 0; n < batch; ++n) {
                        gm[n].data = std::move(grads[n]);
                        gm[n].data *= w.alpha;
                    }
                    seeds.emplace_back(norm_s, from_feature_maps(gm, ms.h, ms.w));
                }
            }

            if (on.m_p2p && queue_.is_ready(cfg_.queue_sample)) {
                const Matrix e = queue_.sample(cfg_.queue_sample, queue_rng_);
                const Var proj = nn::l2_normalize_channels(head_->forward(norm_s));
                const std::vector<FeatureMap> proj_maps = normalized_maps(proj.value(), Origin::student, true);
                std::vector<FeatureMap> gm(batch);
                double sum = 0.0;
                for (int n = 0; n < batch; ++n) {
                    sum += m_p2p_loss(teacher_maps[n], proj_maps[n], e, w.tau_mp2p, &gm[n].data);
                    gm[n].data *= w.beta / batch;
                }
                rec.m_p2p = sum / batch;
                rec.m_p2p_active = true;
                if (w.beta > 0.0) seeds.emplace_back(proj, from_feature_maps(gm, ms.h, ms.w));
            }
        }
    }

    LossComponents comp;
    comp.cfd = on.cfd ? rec.cfd : 0.0;
    comp.is_p2p = (on.is_p2p || on.ii_p2p) ? rec.is_p2p : 0.0;
    if (rec.m_p2p_active) comp.m_p2p = rec.m_p2p;
    const bool finite = std::isfinite(rec.pixel) && std::isfinite(rec.cfd) && std::isfinite(rec.is_p2p) &&
                        std::isfinite(rec.m_p2p);
    if (!finite) {
        throw Divergence("distillation diverged at iteration " + std::to_string(iteration_) +
                         ": non-finite loss component (pixel " + std::to_string(rec.pixel) + ", cfd " +
                         std::to_string(rec.cfd) + ", is_p2p " + std::to_string(rec.is_p2p) + ", m_p2p " +
                         std::to_string(rec.m_p2p) + ")");
    }
    rec.total = rec.pixel + rdd_loss(comp, w);

    for (nn::Param* p : params_) p->zero_grad();
    nn::backward(seeds);
    rec.grad_norm = clip_grad_norm(params_, cfg_.clip);
    if (!std::isfinite(rec.grad_norm)) {
        throw Divergence("distillation diverged at iteration " + std::to_string(iteration_) + ": non-finite gradient");
    }
    rec.lr = learning_rate(iteration_, cfg_.lr, cfg_.warmup, total_iterations_, cfg_.lr_schedule);
    opt_.step(rec.lr);
    ema_update(*ema_, *student_, cfg_.ema_decay);

    if (on.m_p2p) {
        for (const FeatureMap& f : teacher_maps) queue_.push(f, std::min(cfg_.queue_push, f.pixels()), queue_rng_);
    }

    elapsed_ += seconds_since(start);
    rec.seconds = elapsed_;
    ++iteration_;
    records_.push_back(rec);
    return rec;
}

StageReport DistillRun::run(const MetricsSink& sink) {
    StageReport report;
    report.teacher_steps = 2 * student_steps_;
    report.student_steps = student_steps_;
    report.seed = cfg_.seed;
    report.teacher_checksum_before = nn::checksum(const_cast<UNetDenoiser&>(teacher_));
    report.extractor_checksum_before = extractor_.checksum();
    while (iteration_ < total_iterations_) {
        const IterationRecord rec = step();
        if (sink) sink(rec);
    }
    report.teacher_checksum_after = nn::checksum(const_cast<UNetDenoiser&>(teacher_));
    report.extractor_checksum_after = extractor_.checksum();
    report.records = records_;
    report.seconds = elapsed_;
    return report;
}

void DistillRun::save(const std::filesystem::path& path, const std::string& config_hash) const {
    Container c("distill-state");
    c.meta()["spec"] = to_json(student_->spec());
    c.meta()["student_steps"] = student_steps_;
    c.meta()["iteration"] = iteration_;
    c.meta()["elapsed"] = elapsed_;
    c.meta()["config_hash"] = config_hash;
    c.meta()["seed"] = cfg_.seed;
    c.meta()["rng_data"] = rng_state(data_rng_);
    c.meta()["rng_queue"] = rng_state(queue_rng_);
    c.meta()["adam_steps"] = opt_.steps();
    c.meta()["queue"] = {{"count", queue_.count()}, {"cursor", queue_.cursor()}, {"pushed", queue_.pushed()}};
    put_params(c, "model.", *student_);
    put_params(c, "ema.", *ema_);
    put_params(c, "head.", *head_);
    auto& opt = const_cast<Adam&>(opt_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const Shape s = params_[k]->value.shape();
        c.put("adam.m." + std::to_string(k), opt.first_moments()[k].span(), {s.n, s.c, s.h, s.w});
        c.put("adam.v." + std::to_string(k), opt.second_moments()[k].span(), {s.n, s.c, s.h, s.w});
    }
    const Matrix& qs = queue_.storage();
    c.put("queue.storage", std::span<const double>(qs.vec()), {qs.rows(), qs.cols()});
    c.put("queue.ids", std::span<const std::uint64_t>(queue_.slot_ids()), {qs.rows()});
    std::vector<double> hist;
    for (const auto& r : records_) {
        hist.insert(hist.end(), {double(r.iteration), r.total, r.pixel, r.cfd, r.is_p2p, r.m_p2p,
                                 r.m_p2p_active ? 1.0 : 0.0, r.lr, r.grad_norm, r.seconds});
    }
    c.put("history", std::span<const double>(hist), {std::int64_t(records_.size()), 10});
    c.save(path);
}

void DistillRun::load(const std::filesystem::path& path) {
    const Container c = Container::load(path, "distill-state");
    const auto& m = c.meta();
    try {
        if (model_spec_from_json(m.at("spec")) != student_->spec()) throw FormatError("architecture differs");
        if (m.at("student_steps").get<int>() != student_steps_) throw FormatError("student step count differs");
        get_params(c, "model.", *student_);
        get_params(c, "ema.", *ema_);
        get_params(c, "head.", *head_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            const Shape s = params_[k]->value.shape();
            opt_.first_moments()[k] = Tensor(s, c.get_f32("adam.m." + std::to_string(k)));
            opt_.second_moments()[k] = Tensor(s, c.get_f32("adam.v." + std::to_string(k)));
        }
        opt_.set_steps(m.at("adam_steps").get<std::int64_t>());
        const Blob& qb = c.blob("queue.storage");
        queue_ = PixelQueue::restore(Matrix(int(qb.shape[0]), int(qb.shape[1]), c.get_f64("queue.storage")),
                                     c.get_u64("queue.ids"), m.at("queue").at("count").get<int>(),
                                     m.at("queue").at("cursor").get<int>(),
                                     m.at("queue").at("pushed").get<std::uint64_t>());
        set_rng_state(data_rng_, m.at("rng_data").get<std::string>());
        set_rng_state(queue_rng_, m.at("rng_queue").get<std::string>());
        iteration_ = m.at("iteration").get<std::int64_t>();
        elapsed_ = m.value("elapsed", 0.0);
        const auto hist = c.get_f64("history");
        records_.clear();
        for (std::size_t i = 0; i + 10 <= hist.size(); i += 10) {
            IterationRecord r;
            r.iteration = std::int64_t(hist[i]);
            r.total = hist[i + 1];
            r.pixel = hist[i + 2];
            r.cfd = hist[i + 3];
            r.is_p2p = hist[i + 4];
            r.m_p2p = hist[i + 5];
            r.m_p2p_active = hist[i + 6] != 0.0;
            r.lr = hist[i + 7];
            r.grad_norm = hist[i + 8];
            r.seconds = hist[i + 9];
            records_.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad distillation state: " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

StageResult distill_stage(const UNetDenoiser& teacher, const UNetDenoiser& student_init, int student_steps,
                          const FeatureExtractor& extractor, const Dataset& data, PixelQueue& queue,
                          const DistillConfig& cfg, const MetricsSink& sink) {
    DistillRun run(teacher, student_init, student_steps, extractor, data, queue, cfg);
    StageReport report = run.run(sink);
    return StageResult{run.exported(), std::move(report)};
}

std::vector<std::pair<int, int>> stage_plan(int start_steps, int end_steps) {
    auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
    RDD_REQUIRE(pow2(start_steps) && pow2(end_steps),
                "step counts must be powers of two, got " + std::to_string(start_steps) + " and " +
                    std::to_string(end_steps));
    RDD_REQUIRE(start_steps >= end_steps, "start step count must not be below the end step count");
    std::vector<std::pair<int, int>> plan;
    for (int n = start_steps; n > end_steps; n /= 2) plan.emplace_back(n, n / 2);
    return plan;
}

std::vector<StageResult> progressive_distill(const UNetDenoiser& base, int start_steps, int end_steps,
                                             const FeatureExtractor& extractor, const Dataset& data,
                                             const DistillConfig& cfg,
                                             const std::function<void(StageResult&)>& on_stage,
                                             const MetricsSink& sink) {
    const auto plan = stage_plan(start_steps, end_steps);
    std::vector<StageResult> out;
    PixelQueue queue(cfg.queue_capacity, std::max(1, extractor.feature_channels()));
    UNetDenoiser teacher = base;
    for (const auto& [from, to] : plan) {
        if (cfg.reset_queue) queue.reset();
        DistillConfig stage_cfg = cfg;
        stage_cfg.seed = derive_seed(cfg.seed, std::uint64_t(to));
        StageResult r = distill_stage(teacher, teacher, to, extractor, data, queue, stage_cfg, sink);
        if (on_stage) on_stage(r);
        teacher = r.model;
        out.push_back(std::move(r));
    }
    return out;
}

BaseResult train_base(const Dataset& data, const ModelSpec& spec, const BaseConfig& cfg,
                      const std::function<void(std::int64_t, double)>& on_iteration) {
    cfg.validate();
    RDD_REQUIRE(data.size() > 0, "dataset is empty");
    const Shape item = data.item_shape();
    RDD_REQUIRE(item.c == spec.image_channels && item.h == spec.resolution && item.w == spec.resolution,
                "dataset images " + item.str() + " do not match the model");
    const auto start = Clock::now();
    const NoiseSchedule sched;
    BaseResult r{UNetDenoiser(spec, derive_seed(cfg.seed, 0)), {}, {}, 0.0};
    r.ema = r.live;
    nn::set_trainable(r.ema, false);
    auto params = trainable(r.live);
    Adam opt(params);
    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int it = 0; it < cfg.iterations; ++it) {
        const auto idx = draw_indices(cfg.batch_size, data.size(), rng);
        const Tensor x = data.batch(idx);
        std::vector<int> labels;
        if (spec.num_classes > 0) labels = data.batch_labels(idx);
        std::vector<double> t(cfg.batch_size);
        for (double& ti : t) ti = 1.0 - unit(rng);
        const Tensor eps = draw_normal(x.shape(), rng);
        const Tensor z = forward_diffuse(x, t, eps, sched);
        const Var pred = r.live.forward(Var::constant(z), t, labels);
        Tensor g;
        const double loss = pd_loss_batch(x, pred.value(), t, sched, cfg.weighting, &g);
        if (!std::isfinite(loss)) {
            throw Divergence("base training diverged at iteration " + std::to_string(it) + ": loss " +
                             std::to_string(loss));
        }
        for (nn::Param* p : params) p->zero_grad();
        nn::backward(pred, g);
        clip_grad_norm(params, cfg.clip);
        opt.step(learning_rate(it, cfg.lr, cfg.warmup, cfg.iterations, cfg.lr_schedule));
        ema_update(r.ema, r.live, cfg.ema_decay);
        r.losses.push_back(loss);
        if (on_iteration) on_iteration(it, loss);
    }
    r.seconds = seconds_since(start);
    return r;
}

double classifier_accuracy(const Classifier& model, const Dataset& data) {
    RDD_REQUIRE(data.size() > 0, "dataset is empty");
    int correct = 0;
    constexpr int kChunk = 256;
    for (int first = 0; first < data.size(); first += kChunk) {
        const int count = std::min(kChunk, data.size() - first);
        const Matrix p = model.probabilities(data.images.slice(first, count));
        for (int i = 0; i < count; ++i) {
            const auto row = p.row(i);
            const int best = int(std::max_element(row.begin(), row.end()) - row.begin());
            correct += best == data.labels[first + i];
        }
    }
    return double(correct) / data.size();
}

ClassifierResult pretrain_classifier(const Dataset& data, const ClassifierSpec& spec, const ClassifierConfig& cfg) {
    cfg.validate();
    RDD_REQUIRE(data.num_classes == spec.num_classes, "dataset has " + std::to_string(data.num_classes) +
                                                          " classes, classifier expects " +
                                                          std::to_string(spec.num_classes));
    auto [train, holdout] = split_holdout(data, cfg.holdout, derive_seed(cfg.seed, 0));
    ClassifierResult r{Classifier(spec, derive_seed(cfg.seed, 1)), 0.0, {}};
    auto params = trainable(r.model);
    Adam opt(params);
    std::mt19937_64 rng(derive_seed(cfg.seed, 2));
    for (int it = 0; it < cfg.iterations; ++it) {
        const auto idx = draw_indices(cfg.batch_size, train.size(), rng);
        const Var logits = r.model.logits(Var::constant(train.batch(idx)));
        Tensor g;
        const double loss = cross_entropy(logits.value(), train.batch_labels(idx), g);
        if (!std::isfinite(loss)) {
            throw Divergence("classifier training diverged at iteration " + std::to_string(it));
        }
        for (nn::Param* p : params) p->zero_grad();
        nn::backward(logits, g);
        clip_grad_norm(params, 5.0);
        opt.step(learning_rate(it, cfg.lr, 0, cfg.iterations, LrSchedule::cosine));
        r.losses.push_back(loss);
    }
    r.model.freeze();
    r.holdout_accuracy = classifier_accuracy(r.model, holdout);
    return r;
}

} // namespace rdd
