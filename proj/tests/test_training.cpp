#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vat/checkpoint.hpp"
#include "vat/dataset.hpp"
#include "vat/rng.hpp"
#include "vat/train.hpp"

using namespace vat;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.d_vision = 16;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.patch_size = 4;
    cfg.image_h = 8;
    cfg.image_w = 8;
    cfg.num_views = 2;
    cfg.chunk_size = 2;
    cfg.action_dim = 4;
    cfg.tokens_per_action = 4;
    cfg.num_tasks = 4;
    cfg.proprio_dim = 4;
    return cfg;
}

EnvConfig micro_env() {
    EnvConfig e;
    e.image_h = e.image_w = 8;
    return e;
}

Dataset micro_dataset(int64_t episodes_per_task = 2, uint64_t seed = 77) {
    return generate_demos(micro_env(), default_tasks(4), episodes_per_task, seed);
}

std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("l1 loss values") {
    Tensor a = Tensor::zeros({1, 2});
    Tensor b = Tensor::full({1, 2}, 1.0);
    CHECK(l1_loss(a, a).item() == 0.0);
    CHECK(l1_loss(a, b).item() == 1.0);
    Tensor p = Tensor::from_data({1, 2}, {0.0, 2.0});
    Tensor t = Tensor::from_data({1, 2}, {1.0, 0.0});
    CHECK(l1_loss(p, t).item() == doctest::Approx(1.5).epsilon(1e-15));
    CHECK_THROWS_AS(l1_loss(a, Tensor::zeros({2, 2})), DimensionError);
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
    CHECK(cosine_lr(0, 1000, 2e-5) == doctest::Approx(2e-5).epsilon(1e-15));
    CHECK(cosine_lr(1000, 1000, 2e-5) == doctest::Approx(0.0).scale(1).epsilon(1e-20));
    CHECK(cosine_lr(500, 1000, 2e-5) == doctest::Approx(1e-5).epsilon(1e-12));
    double prev = cosine_lr(0, 777, 0.3);
    for (int64_t s = 1; s <= 777; ++s) {
        const double cur = cosine_lr(s, 777, 0.3);
        CHECK(cur <= prev + 1e-18);
        CHECK(cur >= 0.0);
        prev = cur;
    }
    CHECK_THROWS_AS(cosine_lr(-1, 10, 1.0), ContractError);
    CHECK_THROWS_AS(cosine_lr(11, 10, 1.0), ContractError);
}

TEST_CASE("adam zero-gradient step leaves parameters unchanged") {
    std::vector<ParamEntry> params;
    Tensor x = Tensor::from_data({1}, {1.5});
    x.set_requires_grad(true);
    params.push_back({"x", ParamGroup::kAction, x});
    AdamOptimizer opt(params);
    x.grad()[0] = 0.0;
    opt.step(0.1);
    CHECK(x.data()[0] == 1.5);
}

TEST_CASE("adam first step moves by -lr for a unit gradient") {
    std::vector<ParamEntry> params;
    Tensor x = Tensor::from_data({1}, {1.5});
    x.set_requires_grad(true);
    params.push_back({"x", ParamGroup::kAction, x});
    AdamOptimizer opt(params);
    x.grad()[0] = 1.0;
    opt.step(0.1);  // bias-corrected mhat/sqrt(vhat) = 1 at step 1
    CHECK(x.data()[0] == doctest::Approx(1.5 - 0.1).epsilon(1e-7));
}

TEST_CASE("adam converges on a quadratic bowl") {
    std::vector<ParamEntry> params;
    Tensor x = Tensor::from_data({1}, {5.0});
    x.set_requires_grad(true);
    params.push_back({"x", ParamGroup::kAction, x});
    AdamOptimizer opt(params);
    int64_t steps = 0;
    for (; steps < 500; ++steps) {
        x.zero_grad();
        x.grad()[0] = 2.0 * x.data()[0];  // d/dx x^2
        opt.step(0.1);
        if (std::abs(x.data()[0]) < 1e-3) break;
    }
    CHECK(std::abs(x.data()[0]) < 1e-3);
    CHECK(steps < 500);
}

TEST_CASE("noise schedule invariants") {
    NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.02);
    REQUIRE(s.steps() == 50);
    for (int64_t t = 0; t < 50; ++t) {
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
        if (t > 0) {
            CHECK(s.betas[t] > s.betas[t - 1]);
            CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        }
        CHECK(s.alpha_bars[t] > 0.0);
        CHECK(s.alpha_bars[t] <= 1.0);
    }
}

TEST_CASE("diffuse construction, bounds, and reproducibility") {
    NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.02);
    Rng rng(3);
    Tensor target = Tensor::zeros({2, 4});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.normal();

    auto [n1, e1] = diffuse(target, 0, s, 9);
    auto [n2, e2] = diffuse(target, 0, s, 9);
    CHECK(std::memcmp(n1.data(), n2.data(), sizeof(double) * 8) == 0);
    CHECK(std::memcmp(e1.data(), e2.data(), sizeof(double) * 8) == 0);

    // At t = 0 with beta_0 = 1e-4, noisy stays within sqrt(1-abar_0)*|eps|
    // of sqrt(abar_0)*target, which is itself close to target.
    const double abar0 = s.alpha_bars[0];
    for (int64_t i = 0; i < 8; ++i) {
        const double bound = std::sqrt(1.0 - abar0) * std::abs(e1.data()[i]) + 1e-12;
        CHECK(std::abs(n1.data()[i] - std::sqrt(abar0) * target.data()[i]) <= bound);
        CHECK(std::abs(n1.data()[i] - target.data()[i]) < 0.05);
    }
    CHECK_THROWS_AS(diffuse(target, 50, s, 1), IndexError);
    CHECK_THROWS_AS(diffuse(target, -1, s, 1), IndexError);
}

TEST_CASE("diffuse pooled variance matches the schedule over many draws") {
    NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.02);
    Rng rng(12);
    Tensor target = Tensor::zeros({2, 4});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.normal();
    const int64_t t = 30;
    const double abar = s.alpha_bars[t];

    // Pooled variance of noisy entries over draws around the per-entry mean
    // is (1 - abar); adding the spread of sqrt(abar)*target entries gives
    // abar*var(target) + (1 - abar) for the total pool.
    const int64_t draws = 10000;
    double sum = 0.0, sq = 0.0;
    const int64_t n = target.numel();
    for (int64_t d = 0; d < draws; ++d) {
        auto [noisy, eps] = diffuse(target, t, s, 1000 + static_cast<uint64_t>(d));
        for (int64_t i = 0; i < n; ++i) {
            sum += noisy.data()[i];
            sq += noisy.data()[i] * noisy.data()[i];
        }
    }
    const double count = static_cast<double>(draws * n);
    const double mean = sum / count;
    const double var = sq / count - mean * mean;
    double tmean = 0.0, tsq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        tmean += target.data()[i];
        tsq += target.data()[i] * target.data()[i];
    }
    tmean /= static_cast<double>(n);
    const double tvar = tsq / static_cast<double>(n) - tmean * tmean;
    const double want = abar * tvar + (1.0 - abar);
    CHECK(std::abs(var - want) / want < 0.05);
}

TEST_CASE("eps-prediction loss limits") {
    Rng rng(21);
    Tensor eps = Tensor::zeros({8, 4});
    for (int64_t i = 0; i < eps.numel(); ++i) eps.data()[i] = rng.normal();
    CHECK(mean_sq_error(eps, eps).item() == 0.0);

    // A zero predictor scores E[eps^2] = 1 on unit-variance noise.
    double acc = 0.0;
    const int64_t trials = 2000;
    for (int64_t t = 0; t < trials; ++t) {
        Tensor e = Tensor::zeros({8, 4});
        Rng r(5000 + static_cast<uint64_t>(t));
        for (int64_t i = 0; i < e.numel(); ++i) e.data()[i] = r.normal();
        acc += mean_sq_error(Tensor::zeros({8, 4}), e).item();
    }
    CHECK(std::abs(acc / trials - 1.0) < 0.05);
}

TEST_CASE("checkpoint save/load round trip is bit exact and quantizes the live model") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 5);
    const std::string path = temp_dir("vat_ckpt_test") + "/rt.vatc";
    save_checkpoint(path, model);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.config == model.config());
    REQUIRE(loaded.model->parameters().size() == model.parameters().size());
    for (size_t i = 0; i < model.parameters().size(); ++i) {
        const auto& a = model.parameters()[i].tensor.values();
        const auto& b = loaded.model->parameters()[i].tensor.values();
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
        for (double v : a) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
}

TEST_CASE("checkpoint with optimizer moments round trips") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 6);
    AdamOptimizer opt(model.parameters());
    for (auto& p : model.parameters()) {
        auto& g = p.tensor.grad();
        for (auto& v : g) v = 0.25;
    }
    opt.step(1e-3);
    const std::string path = temp_dir("vat_ckpt_test") + "/moments.vatc";
    save_checkpoint(path, model, &opt);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.has_moments);
    CHECK(loaded.adam_step == 1);
    REQUIRE(loaded.moment1.size() == model.parameters().size());
    for (size_t i = 0; i < loaded.moment1.size(); ++i)
        for (size_t j = 0; j < loaded.moment1[i].size(); ++j)
            CHECK(loaded.moment1[i][j] ==
                  static_cast<double>(static_cast<float>(opt.moment1(i)[j])));
}

TEST_CASE("checkpoint corruption and config mismatch are reported") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 7);
    const std::string dir = temp_dir("vat_ckpt_test");
    const std::string path = dir + "/bad.vatc";
    save_checkpoint(path, model);

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 13);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    save_checkpoint(path, model);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(1);
        f.put('X');
    }
    try {
        load_checkpoint(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 0);
    }

    save_checkpoint(path, model);
    LoadedCheckpoint ok = load_checkpoint(path);
    ModelConfig other = cfg;
    other.num_heads = 4;
    try {
        require_same_architecture(other, ok.config);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("num_heads") != std::string::npos);
    }
}

TEST_CASE("training is deterministic and respects frozen vision parameters") {
    Dataset ds = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.checkpoint_every = 1;
    tc.batch_size = 4;
    tc.max_steps = 6;
    tc.seed = 123;

    auto run = [&](const std::string& dir) {
        Model model(micro_config(), 11);
        return train(model, ds, tc, temp_dir(dir));
    };
    TrainResult r1 = run("vat_train_a");
    TrainResult r2 = run("vat_train_b");
    REQUIRE(r1.curve.size() == r2.curve.size());
    for (size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(std::memcmp(&r1.curve[i].loss, &r2.curve[i].loss, sizeof(double)) == 0);
        CHECK(r1.curve[i].lr == r2.curve[i].lr);
    }
    std::ifstream c1(temp_dir("vat_train_a") + "/loss.csv");
    std::ifstream c2(temp_dir("vat_train_b") + "/loss.csv");
    std::string s1((std::istreambuf_iterator<char>(c1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(c2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(s1.rfind("step,epoch,lr,loss\n", 0) == 0);

    // Frozen vision parameters see no optimizer update. The end-of-run
    // checkpoint quantizes the live model to f32 (the format contract), so
    // the bitwise comparison is against the f32-rounded initial values.
    Model frozen(micro_config(), 13);
    std::vector<std::vector<double>> before;
    for (auto& p : frozen.parameters())
        if (p.group == ParamGroup::kVision) before.push_back(p.tensor.values());
    TrainConfig ftc = tc;
    ftc.freeze_vision = true;
    train(frozen, ds, ftc, temp_dir("vat_train_frozen"));
    size_t idx = 0;
    bool action_changed = false;
    for (auto& p : frozen.parameters()) {
        if (p.group == ParamGroup::kVision) {
            const auto& now = p.tensor.values();
            std::vector<double> want = before[idx++];
            for (auto& v : want) v = static_cast<double>(static_cast<float>(v));
            CHECK(std::memcmp(now.data(), want.data(), now.size() * sizeof(double)) == 0);
        }
    }
    Model fresh(micro_config(), 13);
    for (size_t i = 0; i < frozen.parameters().size(); ++i)
        if (frozen.parameters()[i].group == ParamGroup::kAction &&
            frozen.parameters()[i].tensor.values() != fresh.parameters()[i].tensor.values())
            action_changed = true;
    CHECK(action_changed);
}

TEST_CASE("training validates dataset compatibility before any step") {
    Dataset ds = micro_dataset();
    ModelConfig cfg = micro_config();
    cfg.action_dim = 3;
    cfg.tokens_per_action = 3;
    Model model(cfg, 1);
    TrainConfig tc;
    CHECK_THROWS_AS(train(model, ds, tc, temp_dir("vat_train_bad")), ConfigError);
}

TEST_CASE("expert evaluation scores a perfect rate deterministically") {
    EvalReport r = evaluate_expert(micro_env(), default_tasks(4), 5, 31);
    CHECK(r.mean_rate == 1.0);
    for (const auto& t : r.per_task) CHECK(t.rate == 1.0);

    EvalReport r2 = evaluate_expert(micro_env(), default_tasks(4), 5, 31);
    CHECK(r.to_text() == r2.to_text());
}

TEST_CASE("an untrained policy fails while evaluation stays deterministic") {
    Model model(micro_config(), 17);
    EvalReport r = evaluate(model, micro_env(), default_tasks(4), 3, 99);
    CHECK(r.mean_rate <= 0.05);
    EvalReport r2 = evaluate(model, micro_env(), default_tasks(4), 3, 99);
    CHECK(r.to_text() == r2.to_text());

    // Parallel evaluation aggregates identically.
    EvalReport r4 = evaluate(model, micro_env(), default_tasks(4), 3, 99, 0, 4);
    CHECK(r.to_text() == r4.to_text());
}

TEST_CASE("checkpoint round trip preserves evaluation output") {
    Dataset ds = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.checkpoint_every = 1;
    tc.batch_size = 4;
    tc.max_steps = 4;
    Model model(micro_config(), 19);
    TrainResult tr = train(model, ds, tc, temp_dir("vat_train_rt"));
    // save_checkpoint quantized the live model, so both paths see f32 values.
    LoadedCheckpoint loaded = load_checkpoint(tr.checkpoint_paths.back());
    EvalReport live = evaluate(model, micro_env(), default_tasks(4), 3, 7);
    EvalReport from_disk = evaluate(*loaded.model, micro_env(), default_tasks(4), 3, 7);
    CHECK(live.to_text() == from_disk.to_text());
}

TEST_CASE("diffusion training runs and sampling is seed-deterministic") {
    ModelConfig cfg = micro_config();
    cfg.use_diffusion = true;
    Dataset ds = micro_dataset();
    TrainConfig tc;
    tc.loss = LossKind::kDiffusion;
    tc.epochs = 1;
    tc.checkpoint_every = 1;
    tc.batch_size = 4;
    tc.max_steps = 5;
    Model model(cfg, 23);
    TrainResult r = train(model, ds, tc, temp_dir("vat_train_diff"));
    CHECK(r.steps_run == 5);
    for (const auto& p : r.curve) CHECK(std::isfinite(p.loss));

    NoiseSchedule s = NoiseSchedule::linear(tc.diffusion_steps, tc.beta_start, tc.beta_end);
    PickPlaceEnv env(micro_env());
    auto [state, obs] = env.reset(default_tasks(4)[0], 3);
    ModelInput in = make_model_input(model, obs, 0);
    Rng r1(42), r2(42), r3(43);
    Tensor c1 = sample_diffusion_chunk(model, in, s, r1);
    Tensor c2 = sample_diffusion_chunk(model, in, s, r2);
    Tensor c3 = sample_diffusion_chunk(model, in, s, r3);
    CHECK(std::memcmp(c1.data(), c2.data(), sizeof(double) * c1.numel()) == 0);
    bool differs = false;
    for (int64_t i = 0; i < c1.numel(); ++i)
        differs = differs || c1.data()[i] != c3.data()[i];
    CHECK(differs);
}

TEST_CASE("head-only fine-tuning leaves every other parameter untouched") {
    Dataset ds = micro_dataset();
    Model model(micro_config(), 29);
    std::vector<std::vector<double>> before;
    for (auto& p : model.parameters()) before.push_back(p.tensor.values());
    finetune_head(model, ds, 1, 3, 1e-3, 5, 4);
    bool head_changed = false;
    for (size_t i = 0; i < model.parameters().size(); ++i) {
        const auto& p = model.parameters()[i];
        if (p.name.rfind("head.", 0) == 0) {
            if (p.tensor.values() != before[i]) head_changed = true;
        } else {
            CHECK(p.tensor.values() == before[i]);
        }
    }
    CHECK(head_changed);
}
