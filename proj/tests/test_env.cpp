#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vat/dataset.hpp"
#include "vat/env.hpp"
#include "vat/rng.hpp"

using namespace vat;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0;
}

EnvConfig small_env() {
    EnvConfig cfg;
    cfg.image_h = cfg.image_w = 16;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("reset is deterministic and ambiguity pairs share pixels") {
    PickPlaceEnv env;
    const auto tasks = default_tasks(4);
    auto [s1, o1] = env.reset(tasks[0], 99);
    auto [s2, o2] = env.reset(tasks[0], 99);
    CHECK(tensors_equal(o1.view0, o2.view0));
    CHECK(tensors_equal(o1.view1, o2.view1));
    CHECK(tensors_equal(o1.proprio, o2.proprio));

    // Tasks 0 and 1 share color and scene; only the target differs.
    auto [s3, o3] = env.reset(tasks[1], 99);
    CHECK(tensors_equal(o1.view0, o3.view0));
    CHECK(s1.ox == s3.ox);
    CHECK(s1.glx == s3.glx);

    // A different color pair renders differently but shares geometry.
    auto [s4, o4] = env.reset(tasks[2], 99);
    CHECK(s1.ox == s4.ox);
    CHECK(!tensors_equal(o1.view0, o4.view0));
}

TEST_CASE("seeded resets keep objects and goals separated") {
    PickPlaceEnv env(small_env());
    const auto tasks = default_tasks(4);
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        auto [s, obs] = env.reset(tasks[seed % 4], seed);
        auto dist = [](double ax, double ay, double bx, double by) {
            return std::hypot(ax - bx, ay - by);
        };
        CHECK(dist(s.ox, s.oy, s.glx, s.gly) >= 0.15);
        CHECK(dist(s.ox, s.oy, s.grx, s.gry) >= 0.15);
        CHECK(dist(s.glx, s.gly, s.grx, s.gry) >= 0.15);
        CHECK(s.ox >= 0.0);
        CHECK(s.ox <= 1.0);
    }
}

TEST_CASE("zero action leaves the state unchanged except the step index") {
    PickPlaceEnv env(small_env());
    const auto tasks = default_tasks(2);
    auto [s, obs] = env.reset(tasks[0], 5);
    StepResult r = env.step(s, Tensor::zeros({4}), tasks[0]);
    CHECK(r.state.ex == s.ex);
    CHECK(r.state.ey == s.ey);
    CHECK(r.state.theta == s.theta);
    CHECK(r.state.ox == s.ox);
    CHECK(r.state.held == s.held);
    CHECK(r.state.step_index == s.step_index + 1);
}

TEST_CASE("actions beyond the limits are clamped exactly") {
    PickPlaceEnv env(small_env());
    const auto tasks = default_tasks(2);
    WorldState s;
    s.ex = s.ey = 0.5;
    Tensor big = Tensor::from_data({4}, {0.5, -0.7, 1.3, 2.0});
    StepResult r = env.step(s, big, tasks[0]);
    CHECK(r.state.ex == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r.state.ey == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(r.state.theta == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(r.state.gripper == 1.0);

    Tensor nan_action = Tensor::from_data({4}, {0.0, 0.0, std::nan(""), 0.0});
    CHECK_THROWS_AS(env.step(s, nan_action, tasks[0]), ContractError);
}

TEST_CASE("expert edge cases") {
    const auto tasks = default_tasks(2);
    WorldState s;
    s.ex = s.ox = 0.4;
    s.ey = s.oy = 0.6;
    s.held = false;
    Tensor a = expert_action(s, tasks[0]);
    CHECK(a.data()[3] == 1.0);  // on the object, not held: close

    s.held = true;
    s.ex = s.glx;
    s.ey = s.gly;
    Tensor b = expert_action(s, tasks[0]);
    CHECK(b.data()[3] == 0.0);  // holding at the target: open
}

TEST_CASE("expert succeeds within the step budget on 64 seeded episodes") {
    PickPlaceEnv env(small_env());
    const auto tasks = default_tasks(4);
    for (int64_t i = 0; i < 64; ++i) {
        const TaskSpec& task = tasks[static_cast<size_t>(i % 4)];
        auto [s, obs] = env.reset(task, 1000 + static_cast<uint64_t>(i));
        bool success = false;
        int64_t steps = 0;
        WorldState state = s;
        while (steps < env.config().max_steps) {
            Tensor a = expert_action(state, task);
            // Expert actions respect the limits and keep the gripper binary.
            CHECK(std::abs(a.data()[0]) <= kMaxDelta);
            CHECK(std::abs(a.data()[1]) <= kMaxDelta);
            CHECK(std::abs(a.data()[2]) <= kMaxDTheta);
            CHECK((a.data()[3] == 0.0 || a.data()[3] == 1.0));
            StepResult r = env.step(state, a, task);
            state = r.state;
            ++steps;
            if (r.done) {
                success = r.success;
                break;
            }
        }
        CHECK(success);
        CHECK(steps <= 80);
    }
}

TEST_CASE("renders are pure functions of state with pixels in range") {
    PickPlaceEnv env;
    const auto tasks = default_tasks(2);
    auto [s, obs] = env.reset(tasks[1], 77);
    Tensor again = env.render_full(s, tasks[1]);
    CHECK(tensors_equal(obs.view0, again));
    for (int64_t i = 0; i < obs.view0.numel(); ++i) {
        CHECK(obs.view0.data()[i] >= 0.0);
        CHECK(obs.view0.data()[i] <= 1.0);
    }
    for (int64_t i = 0; i < obs.view1.numel(); ++i) {
        CHECK(obs.view1.data()[i] >= 0.0);
        CHECK(obs.view1.data()[i] <= 1.0);
    }
}

TEST_CASE("dataset round trip is exact") {
    const auto tasks = default_tasks(4);
    Dataset ds = generate_demos(small_env(), tasks, 2, 31337);
    CHECK(ds.episodes.size() == 8);
    const std::string path = temp_path("vat_test_roundtrip.vatd");
    write_dataset(ds, path);
    Dataset back = read_dataset(path);
    REQUIRE(back.episodes.size() == ds.episodes.size());
    CHECK(back.image_h == ds.image_h);
    CHECK(back.action_dim == ds.action_dim);
    for (size_t e = 0; e < ds.episodes.size(); ++e) {
        CHECK(back.episodes[e].task_id == ds.episodes[e].task_id);
        CHECK(back.episodes[e].n_steps == ds.episodes[e].n_steps);
        CHECK(back.episodes[e].view0 == ds.episodes[e].view0);
        CHECK(back.episodes[e].view1 == ds.episodes[e].view1);
        CHECK(back.episodes[e].proprio == ds.episodes[e].proprio);
        CHECK(back.episodes[e].action == ds.episodes[e].action);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dataset file size matches the header-plus-payload formula") {
    const auto tasks = default_tasks(2);
    Dataset ds = generate_demos(small_env(), tasks, 3, 99);
    const std::string path = temp_path("vat_test_size.vatd");
    write_dataset(ds, path);
    int64_t expect = 28;
    for (const auto& ep : ds.episodes)
        expect += 8 + ep.n_steps * (6 * ds.image_h * ds.image_w + ds.proprio_dim +
                                    ds.action_dim) * 4;
    CHECK(static_cast<int64_t>(std::filesystem::file_size(path)) == expect);
    CHECK(dataset_file_size(ds) == expect);
    std::filesystem::remove(path);
}

TEST_CASE("dataset generation is reproducible byte for byte") {
    const auto tasks = default_tasks(2);
    const std::string p1 = temp_path("vat_test_regen1.vatd");
    const std::string p2 = temp_path("vat_test_regen2.vatd");
    write_dataset(generate_demos(small_env(), tasks, 2, 4242), p1);
    write_dataset(generate_demos(small_env(), tasks, 2, 4242), p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("empty datasets and episode counts are preserved") {
    Dataset empty;
    empty.image_h = empty.image_w = 16;
    empty.proprio_dim = 4;
    empty.action_dim = 4;
    const std::string path = temp_path("vat_test_empty.vatd");
    write_dataset(empty, path);
    Dataset back = read_dataset(path);
    CHECK(back.episodes.empty());
    std::filesystem::remove(path);

    const auto tasks = default_tasks(4);
    EnvConfig tiny;
    tiny.image_h = tiny.image_w = 8;
    Dataset ds = generate_demos(tiny, tasks, 50, 1);
    CHECK(ds.episodes.size() == 200);
}

TEST_CASE("corrupted and truncated files raise format errors") {
    const auto tasks = default_tasks(2);
    Dataset ds = generate_demos(small_env(), tasks, 1, 5);
    const std::string path = temp_path("vat_test_corrupt.vatd");
    write_dataset(ds, path);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    try {
        read_dataset(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 0);
    }

    write_dataset(ds, path);
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 64);
    CHECK_THROWS_AS(read_dataset(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("manifest sidecar records tasks and counts") {
    const auto tasks = default_tasks(4);
    Dataset ds = generate_demos(small_env(), tasks, 2, 12);
    const std::string path = temp_path("vat_test_manifest.json");
    write_manifest(ds, tasks, 2, 12, path);
    std::ifstream f(path);
    nlohmann::json j = nlohmann::json::parse(f);
    CHECK(j["format"] == "VATD");
    CHECK(j["version"] == 1);
    CHECK(j["n_episodes"] == 8);
    CHECK(j["seed"] == 12);
    CHECK(j["tasks"].size() == 4);
    CHECK(j["tasks"][1]["target"] == "right");
    std::filesystem::remove(path);
}
