// Acceptance run: property suites on random instances plus the desk-scale toy
// pipeline. Prints one PASS/FAIL line per criterion; exit status 1 if any fail.

#include "oracles.hpp"
#include "toy_models.hpp"

#include "rdd/checkpoint.hpp"
#include "rdd/config.hpp"
#include "rdd/eval.hpp"
#include "rdd/losses.hpp"
#include "rdd/memory.hpp"
#include "rdd/schedule.hpp"
#include "rdd/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace rdd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- property suites

Outcome loss_oracles() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> pick_n(1, 4), pick_a(1, 16), pick_v(1, 16), pick_c(1, 8);
    std::uniform_real_distribution<double> pick_tau(0.05, 3.0);
    double worst = 0.0;
    const int instances = 200;
    for (int trial = 0; trial < instances; ++trial) {
        const int n = pick_n(rng), a = pick_a(rng), v = pick_v(rng), c = pick_c(rng);
        const double tau = pick_tau(rng);
        const auto ft = oracle::random_batch(n, a, c, rng), fs = oracle::random_batch(n, a, c, rng);
        const Matrix e = oracle::normalized_rows(oracle::random_matrix(v, c, rng));
        const double ii = ii_p2p_loss(spatial_relation(ft[0], ft[0]), spatial_relation(fs[0], fs[0]), tau);
        const double ii_ref = oracle::ii_p2p(oracle::relation(ft[0].data, ft[0].data),
                                             oracle::relation(fs[0].data, fs[0].data), tau);
        worst = std::max({worst, std::abs(ii - ii_ref), std::abs(is_p2p_loss(ft, fs, tau) - oracle::is_p2p(ft, fs, tau)),
                          std::abs(m_p2p_loss(ft[0], fs[0], e, tau) - oracle::m_p2p(ft[0], fs[0], e, tau))});
        const auto pt = oracle::random_matrix(1, c, rng, 2.0).vec(), ps = oracle::random_matrix(1, c, rng, 2.0).vec();
        worst = std::max(worst, std::abs(cfd_loss(pt, ps, tau) - oracle::cfd(pt, ps, tau)));
    }
    return {worst < 1e-7, std::to_string(instances) + " instances, max |diff| " + fmt(worst)};
}

Outcome gradients() {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> pick_n(1, 3), pick_a(2, 6), pick_c(2, 5), pick_v(2, 6);
    std::uniform_real_distribution<double> pick_tau(0.3, 2.0);
    double worst = 0.0;
    const int instances = 24;
    for (int trial = 0; trial < instances; ++trial) {
        const int n = pick_n(rng), a = pick_a(rng), c = pick_c(rng), v = pick_v(rng);
        const double tau = pick_tau(rng);

        const auto pt = oracle::random_matrix(1, c, rng).vec();
        auto ps = oracle::random_matrix(1, c, rng).vec();
        std::vector<double> g;
        cfd_loss(pt, ps, tau, &g);
        worst = std::max(worst, oracle::relative_error(g, oracle::central_difference(ps, [&] { return cfd_loss(pt, ps, tau); })));

        const Matrix mt = oracle::random_matrix(a, a, rng);
        Matrix ms = oracle::random_matrix(a, a, rng);
        Matrix gm;
        ii_p2p_loss(mt, ms, tau, &gm);
        worst = std::max(worst, oracle::relative_error(gm.vec(), oracle::central_difference(ms.vec(), [&] {
                                                           return ii_p2p_loss(mt, ms, tau);
                                                       })));

        const auto ft = oracle::random_batch(n, a, c, rng);
        auto fs = oracle::random_batch(n, a, c, rng);
        std::vector<Matrix> gs;
        is_p2p_loss(ft, fs, tau, &gs);
        for (int i = 0; i < n; ++i) {
            worst = std::max(worst, oracle::relative_error(gs[i].vec(), oracle::central_difference(fs[i].data.vec(), [&] {
                                                               return is_p2p_loss(ft, fs, tau);
                                                           })));
        }

        const FeatureMap tt = oracle::random_map(a, c, rng);
        FeatureMap st = oracle::random_map(a, c, rng);
        const Matrix e = oracle::normalized_rows(oracle::random_matrix(v, c, rng));
        Matrix gp;
        m_p2p_loss(tt, st, e, tau, &gp);
        worst = std::max(worst, oracle::relative_error(gp.vec(), oracle::central_difference(st.data.vec(), [&] {
                                                           return m_p2p_loss(tt, st, e, tau);
                                                       })));
    }

    // Teacher side: a few full distillation iterations with every loss enabled.
    ModelSpec spec;
    spec.resolution = 8;
    spec.channels = 4;
    spec.time_dim = 8;
    const Dataset data = make_toy_dataset(32, 8, 3);
    Classifier cls(ClassifierSpec{1, 8, 4, 4}, 4);
    cls.freeze();
    UNetDenoiser teacher(spec, 6);
    nn::set_trainable(teacher, false);
    DistillConfig cfg = DistillConfig::desk();
    cfg.losses = LossToggles{true, true, true, false, true};
    cfg.batch_size = 4;
    cfg.iterations = 6;
    cfg.queue_capacity = 64;
    cfg.queue_sample = 8;
    cfg.queue_push = 2;
    PixelQueue q(cfg.queue_capacity, cls.feature_channels());
    distill_stage(teacher, teacher, 2, cls, data, q, cfg);
    double teacher_grad = 0.0;
    auto accumulate = [&](const std::string&, nn::Param& p) {
        for (float x : p.grad.vec()) teacher_grad = std::max(teacher_grad, double(std::abs(x)));
    };
    teacher.visit("", accumulate);
    cls.visit("", accumulate);

    return {worst < 1e-3 && teacher_grad == 0.0, std::to_string(instances) + " instances x 4 losses, max rel err " +
                                                     fmt(worst) + ", max teacher/extractor |grad| " + fmt(teacher_grad)};
}

double max_rel(const Tensor& a, const Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(double(a[i]) - double(b[i])));
        den = std::max(den, std::abs(double(b[i])));
    }
    return num / std::max(den, 1e-12);
}

Outcome schedule_suite() {
    NoiseSchedule s;
    double variance = 0.0;
    for (int i = 0; i <= 100000; ++i) {
        const double t = i / 100000.0;
        variance = std::max(variance, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
    }

    std::mt19937_64 rng(303);
    toy::Squash model;
    double identity = 0.0, consistency = 0.0;
    std::uniform_real_distribution<double> pick_t(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor z = toy::random_tensor({2, 1, 4, 4}, rng);
        const double t = pick_t(rng);
        identity = std::max(identity, max_rel(ddim_step(model, z, t, t, s), z));
    }
    const int cases = 100;
    std::uniform_int_distribution<int> pick_log(0, 4);
    for (int trial = 0; trial < cases; ++trial) {
        const int n = 1 << pick_log(rng);
        std::uniform_int_distribution<int> pick_i(1, n);
        const double t = double(pick_i(rng)) / n;
        const Tensor z = toy::random_tensor({1, 1, 4, 4}, rng);
        const double t1 = t - 1.0 / (2 * n), t2 = t - 1.0 / n;
        const Tensor two = ddim_step(model, ddim_step(model, z, t, t1, s), t1, t2, s);
        const Tensor x = pd_teacher_target(model, z, t, n, s);
        const std::vector<double> tv{t}, sv{t2};
        consistency = std::max(consistency, max_rel(ddim_update(z, x, tv, sv, s), two));
    }
    return {variance < 1e-9 && identity < 1e-7 && consistency < 1e-5,
            "variance " + fmt(variance) + ", identity " + fmt(identity) + ", two-step consistency " + fmt(consistency) +
                " over " + std::to_string(cases) + " cases"};
}

constexpr double kAngle = 1e-3;

FeatureMap tagged_map(int a, int first) {
    FeatureMap f{Matrix(a, 2), true, Origin::teacher};
    for (int r = 0; r < a; ++r) {
        f.data(r, 0) = std::cos((first + r) * kAngle);
        f.data(r, 1) = std::sin((first + r) * kAngle);
    }
    return f;
}

int tag_of(std::span<const double> row) { return int(std::lround(std::atan2(row[1], row[0]) / kAngle)); }

Outcome pixel_queue_suite() {
    std::mt19937_64 rng(404);
    int failures = 0;
    const int cases = 2000;
    for (int trial = 0; trial < cases; ++trial) {
        std::uniform_int_distribution<int> pick_cap(1, 32), pick_a(1, 8);
        const int capacity = pick_cap(rng), a = pick_a(rng);
        PixelQueue q(capacity, 2);
        std::uniform_int_distribution<int> pick_k(1, std::min(a, capacity));
        std::vector<int> pushed_by;
        int pushes = 0;
        while (pushed_by.size() <= std::size_t(capacity) + 5 || pushes < 3) {
            const int k = pick_k(rng);
            q.push(tagged_map(a, pushes * a), k, rng);
            pushed_by.insert(pushed_by.end(), k, pushes);
            ++pushes;
        }
        const auto ids = q.insertion_ids();
        const Matrix snap = q.snapshot();
        const std::size_t offset = pushed_by.size() - capacity;
        bool ok = q.count() == capacity;
        for (int i = 0; ok && i < capacity; ++i) {
            ok = ids[i] == offset + i + 1 && tag_of(snap.row(i)) / a == pushed_by[offset + i];
        }
        failures += !ok;
    }

    // Cold start inside a real stage: m_p2p stays at 0 until the queue holds V rows.
    ModelSpec spec;
    spec.resolution = 8;
    spec.channels = 4;
    spec.time_dim = 8;
    const Dataset data = make_toy_dataset(32, 8, 5);
    Classifier cls(ClassifierSpec{1, 8, 4, 4}, 7);
    cls.freeze();
    UNetDenoiser teacher(spec, 8);
    nn::set_trainable(teacher, false);
    DistillConfig cfg = DistillConfig::desk();
    cfg.batch_size = 2;
    cfg.iterations = 10;
    cfg.queue_capacity = 64;
    cfg.queue_sample = 20;
    cfg.queue_push = 3;
    PixelQueue q(cfg.queue_capacity, cls.feature_channels());
    const StageReport rep = distill_stage(teacher, teacher, 2, cls, data, q, cfg).report;
    int cold = 0;
    bool cold_ok = true;
    for (std::size_t i = 0; i < rep.records.size(); ++i) {
        const bool ready = std::min<std::size_t>(cfg.queue_capacity, i * cfg.batch_size * cfg.queue_push) >=
                           std::size_t(cfg.queue_sample);
        const IterationRecord& r = rep.records[i];
        if (!ready) {
            ++cold;
            cold_ok &= !r.m_p2p_active && r.m_p2p == 0.0;
        } else {
            cold_ok &= r.m_p2p_active && r.m_p2p > 0.0;
        }
    }
    return {failures == 0 && cold_ok && cold > 0, std::to_string(cases) + " FIFO cases, " + std::to_string(failures) +
                                                      " violations; " + std::to_string(cold) +
                                                      " cold-start iterations skipped m_p2p" + (cold_ok ? "" : " (mismatch)")};
}

FeatureStats random_stats(int d, std::mt19937_64& rng) {
    FeatureStats s;
    const Matrix a = oracle::random_matrix(d, d, rng);
    s.mean = oracle::random_matrix(1, d, rng).vec();
    s.cov = Matrix(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) s.cov(i, j) = oracle::dot_rows(a, i, a, j) + (i == j ? 0.1 : 0.0);
    }
    s.count = 100;
    return s;
}

Outcome metric_suite() {
    std::mt19937_64 rng(505);
    double self = 0.0, shift = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> pick_d(1, 12);
        const FeatureStats a = random_stats(pick_d(rng), rng);
        self = std::max(self, std::abs(frechet_distance(a, a)));
        FeatureStats b = a;
        double d2 = 0.0;
        for (double& m : b.mean) {
            const double delta = std::normal_distribution<double>(0.0, 1.0)(rng);
            m += delta;
            d2 += delta * delta;
        }
        shift = std::max(shift, std::abs(frechet_distance(a, b) - d2));
    }
    bool bounds = true;
    for (int trial = 0; trial < 50; ++trial) {
        const int classes = 2 + trial % 9;
        Matrix p = oracle::random_matrix(20, classes, rng, 3.0);
        for (int i = 0; i < 20; ++i) {
            const std::vector<double> row(p.row(i).begin(), p.row(i).end());
            const auto q = oracle::softmax(row, 1.0);
            std::copy(q.begin(), q.end(), p.row(i).begin());
        }
        const double is = inception_score(p);
        bounds &= is >= 1.0 - 1e-12 && is <= classes + 1e-12;
    }
    bool one_hot = true;
    for (int classes = 1; classes <= 10; ++classes) {
        Matrix eye(classes * 3, classes);
        for (int i = 0; i < classes * 3; ++i) eye(i, i % classes) = 1.0;
        one_hot &= inception_score(eye) == double(classes) || std::abs(inception_score(eye) - classes) < 1e-12;
    }
    return {self < 1e-6 && shift < 1e-6 && bounds && one_hot,
            "self-distance " + fmt(self) + ", mean-shift err " + fmt(shift) + ", IS bounds " + (bounds ? "ok" : "violated") +
                ", one-hot " + (one_hot ? "exact" : "wrong")};
}

// ---------------------------------------------------------------- desk pipeline

struct Pipeline {
    ExperimentConfig cfg;
    Dataset data;
    std::optional<Classifier> cls;
    std::optional<UNetDenoiser> base;
    FeatureStats reference;
    std::uint64_t base_checksum = 0;
    std::uint64_t cls_checksum = 0;
    std::vector<StageReport> reports;
    json log = json::object();
    fs::path cache;

    Shape item_shape() const { return {1, cfg.model.image_channels, cfg.model.resolution, cfg.model.resolution}; }

    void prepare() {
        data = load_dataset(cfg.dataset);
        const fs::path cls_path = cache / "classifier.rddc", base_path = cache / "base.rddc";
        if (!cache.empty() && fs::exists(cls_path)) {
            cls = load_classifier(cls_path);
        } else {
            ClassifierResult r = pretrain_classifier(data, cfg.classifier, cfg.classifier_train);
            std::cout << "  classifier holdout accuracy " << r.holdout_accuracy << "\n";
            log["classifier_accuracy"] = r.holdout_accuracy;
            cls = std::move(r.model);
            if (!cache.empty()) save_classifier(cls_path, *cls);
        }
        if (!cache.empty() && fs::exists(base_path)) {
            base = load_model(base_path).model;
        } else {
            BaseResult r = train_base(data, cfg.model, cfg.base);
            std::cout << "  base loss " << r.losses.front() << " -> " << r.losses.back() << " in " << r.seconds << "s\n";
            log["base"] = {{"first_loss", r.losses.front()}, {"last_loss", r.losses.back()}, {"seconds", r.seconds}};
            base = std::move(r.ema);
            if (!cache.empty()) save_model(base_path, *base, cfg.base_steps);
        }
        nn::set_trainable(*base, false);
        cls->freeze();
        base_checksum = nn::checksum(*base);
        cls_checksum = cls->checksum();
        reference = collect_stats(*cls, data.images);
    }

    EvalResult evaluate(const UNetDenoiser& m, int steps, std::uint64_t seed) const {
        return evaluate_model(m, steps, cfg.eval.n_samples, *cls, reference, seed, item_shape(),
                              cfg.model.num_classes, cfg.eval.splits);
    }
};

DistillConfig method_config(const ExperimentConfig& base, Method m, std::uint64_t seed) {
    DistillConfig c = base.distill;
    c.method = m;
    c.losses = method_toggles(m);
    c.seed = seed;
    return c;
}

Outcome additivity(Pipeline& p) {
    DistillConfig cfg = method_config(p.cfg, Method::rdd, 77);
    cfg.iterations = 500;
    const int student = p.cfg.start_steps / 2;
    PixelQueue q(cfg.queue_capacity, p.cls->feature_channels());
    const StageReport rep = distill_stage(*p.base, *p.base, student, *p.cls, p.data, q, cfg).report;
    p.reports.push_back(rep);
    double worst = 0.0;
    for (const auto& r : rep.records) {
        worst = std::max(worst, std::abs(r.total - (r.cfd + cfg.weights.alpha * r.is_p2p + cfg.weights.beta * r.m_p2p)));
    }
    return {rep.records.size() == 500 && worst < 1e-6,
            std::to_string(rep.records.size()) + " iterations, max |total - sum| " + fmt(worst)};
}

Outcome end_to_end(Pipeline& p) {
    const auto t0 = std::chrono::steady_clock::now();
    DistillConfig cfg = method_config(p.cfg, p.cfg.distill.method, p.cfg.distill.seed);
    bool decreasing = true;
    std::string detail;
    json stages = json::array();
    progressive_distill(*p.base, p.cfg.base_steps, 4, *p.cls, p.data, cfg, [&](StageResult& r) {
        const double first = r.report.mean_first(100), last = r.report.mean_last(100);
        decreasing &= r.report.records.size() >= 200 && last < first;
        detail += " " + std::to_string(r.report.teacher_steps) + "->" + std::to_string(r.report.student_steps) + ": " +
                  fmt(first) + "->" + fmt(last) + ";";
        stages.push_back({{"teacher_steps", r.report.teacher_steps}, {"student_steps", r.report.student_steps},
                          {"first100", first}, {"last100", last}, {"seconds", r.report.seconds}});
        std::cout << "  " << r.report.teacher_steps << "->" << r.report.student_steps << " mean loss " << first << " -> "
                  << last << " (" << r.report.seconds << "s)\n";
        p.reports.push_back(r.report);
    });
    const double elapsed = seconds_since(t0);
    p.log["end_to_end"] = {{"stages", stages}, {"seconds", elapsed}};
    return {decreasing && elapsed < 4 * 3600.0, fmt(elapsed) + "s;" + detail};
}

// fid[method][seed][steps index] for steps {4, 2, 1}
struct Chains {
    std::vector<std::vector<std::array<double, 3>>> fid;
    std::vector<Method> methods{Method::pd, Method::cfd, Method::rdd};
};

Chains run_chains(Pipeline& p, int seeds) {
    Chains c;
    json runs = json::array();
    for (Method m : c.methods) {
        c.fid.emplace_back();
        for (int s = 0; s < seeds; ++s) {
            std::array<double, 3> fid{};
            const DistillConfig cfg = method_config(p.cfg, m, std::uint64_t(s));
            const std::uint64_t eval_seed = derive_seed(p.cfg.eval.seed, std::uint64_t(s));
            progressive_distill(*p.base, p.cfg.start_steps, 1, *p.cls, p.data, cfg, [&](StageResult& r) {
                p.reports.push_back(r.report);
                const int k = r.report.student_steps;
                if (k != 4 && k != 2 && k != 1) return;
                const EvalResult e = p.evaluate(r.model, k, eval_seed);
                fid[k == 4 ? 0 : k == 2 ? 1 : 2] = e.fid;
                runs.push_back({{"method", to_string(m)}, {"seed", s}, {"steps", k}, {"fid", e.fid},
                                {"inception_score", e.inception_score}, {"seconds", r.report.seconds}});
                std::cout << "  " << to_string(m) << " seed " << s << " " << k << "-step FID " << e.fid << " IS "
                          << e.inception_score << "\n";
            });
            c.fid.back().push_back(fid);
        }
    }
    p.log["chains"] = runs;
    return c;
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / double(v.size() - 1));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Monotone {
    bool ok = true;
    std::string detail;
};

// FID(1) >= FID(2) >= FID(4) for every seed, each step allowed to miss by one seed-level sd.
Monotone monotone(const Chains& c, std::size_t mi) {
    const auto& runs = c.fid[mi];
    std::array<double, 3> sd{};
    for (int k = 0; k < 3; ++k) {
        std::vector<double> col;
        for (const auto& r : runs) col.push_back(r[k]);
        sd[k] = stddev(col);
    }
    Monotone m;
    m.detail = to_string(c.methods[mi]) + " 1/2/4-step FID";
    for (std::size_t s = 0; s < runs.size(); ++s) {
        const auto& f = runs[s];
        m.ok &= f[1] >= f[0] - std::max(sd[0], sd[1]);
        m.ok &= f[2] >= f[1] - std::max(sd[1], sd[2]);
        m.detail += (s ? ", " : " ") + fmt(f[2]) + "/" + fmt(f[1]) + "/" + fmt(f[0]);
    }
    m.detail += " (sd " + fmt(sd[2]) + "/" + fmt(sd[1]) + "/" + fmt(sd[0]) + ")";
    return m;
}

Outcome trend(const Chains& c) {
    const Monotone pd = monotone(c, 0);
    std::string detail = pd.detail;
    for (std::size_t mi = 1; mi < c.methods.size(); ++mi) {
        const Monotone other = monotone(c, mi);
        detail += "; " + other.detail + (other.ok ? " monotone" : " not monotone") + ", not gated";
    }
    return {pd.ok, detail};
}

Outcome method_trend(const Chains& c) {
    std::array<double, 3> med{};
    for (int m = 0; m < 3; ++m) {
        std::vector<double> one;
        for (const auto& r : c.fid[m]) one.push_back(r[2]);
        med[m] = median(one);
    }
    return {med[2] <= med[0], "median 1-step FID pd " + fmt(med[0]) + ", cfd " + fmt(med[1]) + ", rdd " + fmt(med[2]) +
                                  " (rdd <= cfd: " + (med[2] <= med[1] ? "yes" : "no") + ", not gated)"};
}

Outcome frozen(Pipeline& p) {
    int bad = 0;
    for (const auto& r : p.reports) {
        bad += r.teacher_checksum_before != r.teacher_checksum_after;
        bad += r.extractor_checksum_before != r.extractor_checksum_after;
    }
    const bool base_ok = nn::checksum(*p.base) == p.base_checksum && p.cls->checksum() == p.cls_checksum;
    return {bad == 0 && base_ok && !p.reports.empty(),
            std::to_string(p.reports.size()) + " stages, " + std::to_string(bad) + " checksum changes"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run for the relational distillation toolkit"};
    std::string config_path, cache, report;
    std::vector<std::string> only;
    int seeds = 3;
    app.add_option("--config", config_path, "experiment config (defaults to the desk profile)");
    app.add_option("--cache-dir", cache, "reuse or store the classifier and base model here");
    app.add_option("--report", report, "write a JSON summary here");
    app.add_option("--only", only, "run only the named criteria");
    app.add_option("--seeds", seeds, "seeds for the trend criteria")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    Pipeline p;
    p.cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    p.cfg.validate();
    p.cache = cache;
    if (!cache.empty()) fs::create_directories(cache);

    int failed = 0, ran = 0;
    json results = json::array();
    auto wanted = [&](const std::string& name) {
        return only.empty() || std::find(only.begin(), only.end(), name) != only.end();
    };
    auto criterion = [&](const std::string& name, double budget_seconds, const std::function<Outcome()>& fn) {
        if (!wanted(name)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double dt = seconds_since(t0);
        if (budget_seconds > 0 && dt > budget_seconds) {
            o.pass = false;
            o.detail += "; over the " + fmt(budget_seconds) + "s budget";
        }
        ++ran;
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fmt(dt, 3) << "s): " << o.detail << std::endl;
        results.push_back({{"criterion", name}, {"pass", o.pass}, {"seconds", dt}, {"detail", o.detail}});
    };

    criterion("loss-oracles", 60, loss_oracles);
    criterion("gradients", 300, gradients);
    criterion("schedule-ddim", 60, schedule_suite);
    criterion("pixel-queue", 60, pixel_queue_suite);
    criterion("metrics", 0, metric_suite);

    const bool pipeline = wanted("additivity") || wanted("end-to-end") || wanted("fid-trend") ||
                          wanted("method-trend") || wanted("frozen-teacher");
    if (pipeline) {
        std::cout << "preparing desk pipeline" << std::endl;
        p.prepare();
        criterion("additivity", 0, [&] { return additivity(p); });
        criterion("end-to-end", 0, [&] { return end_to_end(p); });
        if (wanted("fid-trend") || wanted("method-trend")) {
            const Chains c = run_chains(p, seeds);
            criterion("fid-trend", 0, [&] { return trend(c); });
            criterion("method-trend", 0, [&] { return method_trend(c); });
        }
        criterion("frozen-teacher", 0, [&] { return frozen(p); });
    }

    if (!report.empty()) {
        p.log["criteria"] = results;
        std::ofstream(report) << p.log.dump(2) << "\n";
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << ran - failed << "/" << ran << std::endl;
    return failed ? 1 : 0;
}
