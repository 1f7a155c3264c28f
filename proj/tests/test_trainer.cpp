#include "doctest.h"

#include "rdd/error.hpp"
#include "rdd/kernels.hpp"
#include "rdd/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace rdd;

namespace {

ModelSpec tiny_model() {
    ModelSpec s;
    s.resolution = 8;
    s.channels = 4;
    s.time_dim = 8;
    return s;
}

ClassifierSpec tiny_classifier() { return ClassifierSpec{1, 8, 4, 4}; }

DistillConfig tiny_distill(Method m) {
    DistillConfig c = DistillConfig::desk();
    c.method = m;
    c.losses = method_toggles(m);
    c.batch_size = 4;
    c.iterations = 12;
    c.iterations_final = 12;
    c.queue_capacity = 64;
    c.queue_sample = 16;
    c.queue_push = 2;
    c.warmup = 2;
    c.seed = 5;
    return c;
}

struct Fixture {
    Dataset data = make_toy_dataset(64, 8, 3);
    Classifier cls{tiny_classifier(), 4};
    UNetDenoiser teacher{tiny_model(), 6};
    Fixture() {
        cls.freeze();
        nn::set_trainable(teacher, false);
    }
};

template <class M>
std::vector<float> flat_params(M& m) {
    std::vector<float> out;
    m.visit("", [&](const std::string&, nn::Param& p) { out.insert(out.end(), p.value.vec().begin(), p.value.vec().end()); });
    return out;
}

} // namespace

TEST_CASE("methods and toggles") {
    CHECK(method_toggles(Method::pd) == LossToggles{true, false, false, false, false});
    CHECK(method_toggles(Method::cfd) == LossToggles{false, true, false, false, false});
    CHECK(method_toggles(Method::rdd) == LossToggles{false, true, true, false, true});
    for (Method m : {Method::pd, Method::cfd, Method::rdd}) CHECK(parse_method(to_string(m)) == m);
    CHECK_THROWS_AS(parse_method("lpips"), InvalidArgument);
}

TEST_CASE("DistillConfig defaults and validation") {
    const DistillConfig p = DistillConfig::full();
    CHECK(p.weights.alpha == 1.0);
    CHECK(p.weights.beta == 0.1);
    CHECK(p.weights.tau_isp2p == 1.0);
    CHECK(p.weights.tau_mp2p == 0.1);
    CHECK(p.queue_capacity == 20000);
    CHECK(p.queue_sample == 2048);
    CHECK(p.batch_size == 128);
    CHECK(p.lr == 5e-5);
    CHECK(p.ema_decay == 0.9999);
    CHECK(p.clip == 1.0);
    CHECK(p.iterations_for(2) == 20000);
    CHECK(p.iterations_for(1) == 40000);
    CHECK(p.tau_cfd_for(4) == 0.9);
    CHECK(p.tau_cfd_for(2) == 1.0);
    CHECK(p.tau_cfd_for(1) == 0.85);
    CHECK(p.tau_cfd_for(16) == p.weights.tau_cfd);

    DistillConfig c = p;
    c.ema_decay = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = p;
    c.clip = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = p;
    c.iterations = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = p;
    c.losses.ii_p2p = true;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = p;
    c.losses = LossToggles{false, false, false, false, false};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("stage_plan") {
    using P = std::vector<std::pair<int, int>>;
    CHECK(stage_plan(8, 1) == P{{8, 4}, {4, 2}, {2, 1}});
    CHECK(stage_plan(8, 8).empty());
    CHECK(stage_plan(64, 4).size() == 4);
    CHECK_THROWS_AS(stage_plan(6, 1), InvalidArgument);
    CHECK_THROWS_AS(stage_plan(8, 3), InvalidArgument);
    CHECK_THROWS_AS(stage_plan(2, 8), InvalidArgument);
}

TEST_CASE("optimiser utilities") {
    std::vector<nn::Param> ps(2);
    ps[0] = nn::Param(Tensor({1, 3, 1, 1}, std::vector<float>{3, 0, 0}));
    ps[1] = nn::Param(Tensor({1, 1, 1, 1}, std::vector<float>{4}));
    ps[0].grad = Tensor({1, 3, 1, 1}, std::vector<float>{3, 0, 0});
    ps[1].grad = Tensor({1, 1, 1, 1}, std::vector<float>{4});
    std::vector<nn::Param*> ptrs{&ps[0], &ps[1]};
    CHECK(global_grad_norm(ptrs) == doctest::Approx(5.0));
    CHECK(clip_grad_norm(ptrs, 1.0) == doctest::Approx(5.0));
    CHECK(global_grad_norm(ptrs) <= 1.0 + 1e-6);
    CHECK(clip_grad_norm(ptrs, 10.0) <= 1.0 + 1e-6);
    CHECK(ps[1].grad[0] == doctest::Approx(0.8).epsilon(1e-5));

    CHECK(learning_rate(0, 1.0, 4, 100, LrSchedule::constant) == doctest::Approx(0.25));
    CHECK(learning_rate(50, 1.0, 0, 100, LrSchedule::constant) == 1.0);
    CHECK(learning_rate(0, 1.0, 0, 100, LrSchedule::cosine) == doctest::Approx(1.0));
    CHECK(learning_rate(50, 1.0, 0, 100, LrSchedule::cosine) == doctest::Approx(0.5));
    CHECK(learning_rate(99, 1.0, 0, 100, LrSchedule::cosine) < 0.01);

    std::vector<nn::Param> live(1), ema(1);
    live[0] = nn::Param(Tensor({1, 2, 1, 1}, std::vector<float>{1, 2}));
    ema[0] = nn::Param(Tensor({1, 2, 1, 1}, std::vector<float>{5, 6}));
    std::vector<nn::Param*> l{&live[0]}, e{&ema[0]};
    ema_update(e, l, 0.5);
    CHECK(ema[0].value[0] == doctest::Approx(3.0));
    ema_update(e, l, 0.0);
    CHECK(ema[0].value[1] == 2.0f);
}

TEST_CASE("train_base") {
    Dataset two = make_toy_dataset(2, 8, 1);
    BaseConfig cfg;
    cfg.iterations = 300;
    cfg.batch_size = 8;
    cfg.warmup = 10;
    cfg.lr = 5e-3;
    cfg.seed = 2;

    SUBCASE("fits a two-image dataset") {
        const BaseResult r = train_base(two, tiny_model(), cfg);
        REQUIRE(r.losses.size() == 300);
        const double first = std::accumulate(r.losses.begin(), r.losses.begin() + 20, 0.0) / 20;
        const double last = std::accumulate(r.losses.end() - 20, r.losses.end(), 0.0) / 20;
        CHECK(last < 0.5 * first);
    }
    SUBCASE("deterministic and EMA with decay 0 tracks the live weights") {
        cfg.iterations = 15;
        cfg.ema_decay = 0.0;
        BaseResult a = train_base(two, tiny_model(), cfg);
        BaseResult b = train_base(two, tiny_model(), cfg);
        CHECK(a.losses == b.losses);
        CHECK(flat_params(a.ema) == flat_params(a.live));
    }
    SUBCASE("rejects mismatched data") {
        CHECK_THROWS_AS(train_base(make_toy_dataset(4, 16, 1), tiny_model(), cfg), InvalidArgument);
    }
}

TEST_CASE("pretrain_classifier") {
    const Dataset ds = make_toy_dataset(600, 8, 2);
    ClassifierConfig cfg;
    cfg.iterations = 150;
    cfg.batch_size = 32;
    cfg.seed = 3;
    ClassifierResult r = pretrain_classifier(ds, tiny_classifier(), cfg);
    CHECK(r.holdout_accuracy >= 2.0 / kToyClasses);
    CHECK(r.model.frozen());
    const std::uint64_t sum = r.model.checksum();
    CHECK(r.model.checksum() == sum);
    cfg.iterations = 20;
    CHECK(pretrain_classifier(ds, tiny_classifier(), cfg).model.checksum() ==
          pretrain_classifier(ds, tiny_classifier(), cfg).model.checksum());
}

TEST_CASE("PD with a constant teacher starts at zero loss") {
    Fixture f;
    ModelSpec spec = tiny_model();
    spec.prediction = Prediction::x;
    UNetDenoiser constant(spec, 1);
    constant.output_layer().weight.value.fill(0.0f);
    constant.output_layer().bias.value.fill(0.25f);
    PixelQueue q(64, f.cls.feature_channels());
    DistillRun run(constant, constant, 2, f.cls, f.data, q, tiny_distill(Method::pd));
    CHECK(run.step().total < 1e-10);
}

TEST_CASE("distillation stage invariants") {
    Fixture f;
    const DistillConfig cfg = tiny_distill(Method::rdd);
    PixelQueue q(cfg.queue_capacity, f.cls.feature_channels());
    const StageResult r = distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q, cfg);
    const StageReport& rep = r.report;
    REQUIRE(rep.records.size() == 12);
    CHECK(rep.teacher_checksum_before == rep.teacher_checksum_after);
    CHECK(rep.extractor_checksum_before == rep.extractor_checksum_after);
    CHECK(rep.teacher_steps == 4);
    CHECK(rep.student_steps == 2);
    const int ready_after = (cfg.queue_sample + cfg.batch_size * cfg.queue_push - 1) / (cfg.batch_size * cfg.queue_push);
    for (std::size_t i = 0; i < rep.records.size(); ++i) {
        const IterationRecord& rec = rep.records[i];
        CHECK(std::isfinite(rec.total));
        CHECK(rec.pixel == 0.0);
        CHECK(std::abs(rec.total - (rec.cfd + cfg.weights.alpha * rec.is_p2p + cfg.weights.beta * rec.m_p2p)) < 1e-6);
        CHECK(rec.m_p2p_active == (int(i) >= ready_after));
        if (!rec.m_p2p_active) CHECK(rec.m_p2p == 0.0);
        CHECK(rec.iteration == std::int64_t(i));
    }
    CHECK(q.count() == std::min<int>(cfg.queue_capacity, 12 * cfg.batch_size * cfg.queue_push));
    f.teacher.visit("", [](const std::string&, nn::Param& p) {
        for (float g : p.grad.vec()) CHECK(g == 0.0f);
    });
    f.cls.visit("", [](const std::string&, nn::Param& p) {
        for (float g : p.grad.vec()) CHECK(g == 0.0f);
    });
}

TEST_CASE("RDD with zero relational weights reproduces CFD") {
    Fixture f;
    DistillConfig rdd = tiny_distill(Method::rdd);
    rdd.weights.alpha = 0.0;
    rdd.weights.beta = 0.0;
    const DistillConfig cfd = tiny_distill(Method::cfd);
    PixelQueue q1(rdd.queue_capacity, f.cls.feature_channels()), q2(rdd.queue_capacity, f.cls.feature_channels());
    const StageResult a = distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q1, rdd);
    const StageResult b = distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q2, cfd);
    CHECK(a.report.losses() == b.report.losses());
}

TEST_CASE("ablation toggles zero exactly their component") {
    Fixture f;
    DistillConfig cfg = tiny_distill(Method::rdd);
    cfg.iterations = 8;
    cfg.losses.is_p2p = false;
    cfg.losses.m_p2p = false;
    PixelQueue q(cfg.queue_capacity, f.cls.feature_channels());
    const StageResult r = distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q, cfg);
    for (const auto& rec : r.report.records) {
        CHECK(rec.is_p2p == 0.0);
        CHECK(rec.m_p2p == 0.0);
        CHECK(rec.cfd > 0.0);
        CHECK(rec.total == rec.cfd);
    }
    CHECK(q.count() == 0);

    cfg = tiny_distill(Method::rdd);
    cfg.iterations = 4;
    cfg.losses.is_p2p = false;
    cfg.losses.ii_p2p = true;
    cfg.losses.pixel = true;
    PixelQueue q2(cfg.queue_capacity, f.cls.feature_channels());
    const StageResult s = distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q2, cfg);
    for (const auto& rec : s.report.records) {
        CHECK(rec.is_p2p > 0.0);
        CHECK(rec.pixel > 0.0);
        CHECK(std::abs(rec.total - (rec.pixel + rec.cfd + rec.is_p2p + 0.1 * rec.m_p2p)) < 1e-9);
    }
}

TEST_CASE("distillation is reproducible in serial and parallel modes") {
    Fixture f;
    const DistillConfig cfg = tiny_distill(Method::rdd);
    std::vector<std::vector<double>> series;
    for (auto backend : {kernels::Backend::serial, kernels::Backend::serial, kernels::Backend::parallel}) {
        kernels::set_backend(backend);
        PixelQueue q(cfg.queue_capacity, f.cls.feature_channels());
        series.push_back(distill_stage(f.teacher, f.teacher, 2, f.cls, f.data, q, cfg).report.losses());
    }
    kernels::set_backend(kernels::Backend::parallel);
    CHECK(series[0] == series[1]);
    for (std::size_t i = 0; i < series[0].size(); ++i) {
        CHECK(series[2][i] == doctest::Approx(series[0][i]).epsilon(1e-4));
    }
}

TEST_CASE("resumed run continues the same trajectory") {
    Fixture f;
    const DistillConfig cfg = tiny_distill(Method::rdd);
    const auto path = std::filesystem::temp_directory_path() / "rdd-test-resume.rddc";
    PixelQueue q1(cfg.queue_capacity, f.cls.feature_channels());
    DistillRun full(f.teacher, f.teacher, 2, f.cls, f.data, q1, cfg);
    for (int i = 0; i < 6; ++i) full.step();
    full.save(path, "hash");
    for (int i = 0; i < 6; ++i) full.step();

    PixelQueue q2(cfg.queue_capacity, f.cls.feature_channels());
    DistillRun resumed(f.teacher, f.teacher, 2, f.cls, f.data, q2, cfg);
    resumed.load(path);
    CHECK(resumed.iteration() == 6);
    CHECK(q2.insertion_ids().size() == std::size_t(q2.count()));
    for (int i = 0; i < 6; ++i) resumed.step();
    for (int i = 0; i < 12; ++i) CHECK(resumed.records()[i].total == full.records()[i].total);
    CHECK(flat_params(resumed.student()) == flat_params(full.student()));
    CHECK(flat_params(resumed.head()) == flat_params(full.head()));
    std::filesystem::remove(path);
}

TEST_CASE("distillation errors") {
    Fixture f;
    DistillConfig cfg = tiny_distill(Method::rdd);
    PixelQueue wrong(cfg.queue_capacity, f.cls.feature_channels() + 1);
    CHECK_THROWS_AS(DistillRun(f.teacher, f.teacher, 2, f.cls, f.data, wrong, cfg), InvalidArgument);

    UNetDenoiser broken = f.teacher;
    broken.visit("", [](const std::string& name, nn::Param& p) {
        if (name.rfind("in_conv", 0) == 0) p.value.fill(NAN);
    });
    PixelQueue q(cfg.queue_capacity, f.cls.feature_channels());
    DistillRun run(broken, f.teacher, 2, f.cls, f.data, q, tiny_distill(Method::pd));
    CHECK_THROWS_AS(run.step(), Divergence);
}

TEST_CASE("progressive_distill chains stages") {
    Fixture f;
    DistillConfig cfg = tiny_distill(Method::rdd);
    cfg.iterations = 3;
    cfg.iterations_final = 4;
    std::vector<int> seen;
    std::vector<std::uint64_t> seeds;
    const auto stages = progressive_distill(f.teacher, 8, 1, f.cls, f.data, cfg, [&](StageResult& r) {
        seen.push_back(r.report.student_steps);
        seeds.push_back(r.report.seed);
    });
    REQUIRE(stages.size() == 3);
    CHECK(seen == std::vector<int>{4, 2, 1});
    CHECK(stages[2].report.records.size() == 4);
    CHECK(seeds[0] != seeds[1]);
    // Each stage starts from the previous stage's export, so its teacher checksum matches it.
    CHECK(stages[1].report.teacher_checksum_before == nn::checksum(const_cast<UNetDenoiser&>(stages[0].model)));
    for (const auto& s : stages) CHECK_FALSE(s.report.records.front().m_p2p_active);
    CHECK(progressive_distill(f.teacher, 4, 4, f.cls, f.data, cfg).empty());
}
