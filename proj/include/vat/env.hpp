#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vat/tensor.hpp"

namespace vat {

// Planar pick-and-place world on the unit square: a disk object must be
// carried to one of two goal squares. Two tasks with the same object color
// but different targets form a goal-ambiguity pair: their initial scenes
// render pixel-identically, so only task conditioning can disambiguate.

enum class Target { kLeft, kRight };

struct TaskSpec {
    int64_t task_id = 0;
    Target target = Target::kLeft;
    int64_t object_color_id = 0;
};

// Tasks 2i / 2i+1 share object color i and differ only in target.
std::vector<TaskSpec> default_tasks(int64_t num_tasks);

struct WorldState {
    double ex = 0.5, ey = 0.5;   // effector position
    double theta = 0.0;          // effector orientation, radians
    double gripper = 0.0;        // 0 = open, 1 = closed
    double ox = 0.5, oy = 0.5;   // object position
    bool held = false;
    double glx = 0.2, gly = 0.5; // left goal
    double grx = 0.8, gry = 0.5; // right goal
    int64_t step_index = 0;
};

struct Observation {
    Tensor view0;   // [3,H,W] full scene
    Tensor view1;   // [3,H,W] effector-centered crop
    Tensor proprio; // [4] = (x, y, theta, gripper)
};

struct EnvConfig {
    int64_t image_h = 64;
    int64_t image_w = 64;
    int64_t max_steps = 80;
    double min_separation = 0.15;
};

// Action layout (L = 4): dx, dy, dtheta, gripper command.
inline constexpr int64_t kEnvActionDim = 4;
inline constexpr double kMaxDelta = 0.1;
inline constexpr double kMaxDTheta = 0.2;
inline constexpr double kGraspRadius = 0.05;
inline constexpr double kSuccessRadius = 0.05;

struct StepResult {
    WorldState state;
    Observation obs;
    bool done = false;
    bool success = false;
};

class PickPlaceEnv {
public:
    explicit PickPlaceEnv(const EnvConfig& cfg = {}) : cfg_(cfg) {}

    const EnvConfig& config() const { return cfg_; }

    // Deterministic initial state for (task, seed); the sampling stream
    // depends on the seed only, so an ambiguity pair shares its geometry.
    std::pair<WorldState, Observation> reset(const TaskSpec& task, uint64_t seed) const;

    StepResult step(const WorldState& state, const Tensor& action, const TaskSpec& task) const;

    Observation observe(const WorldState& state, const TaskSpec& task) const;
    Tensor render_full(const WorldState& state, const TaskSpec& task) const;
    Tensor render_wrist(const WorldState& state, const TaskSpec& task) const;

private:
    EnvConfig cfg_;
};

// Scripted proportional controller: approach the object, close, carry to
// the task's target, open.
Tensor expert_action(const WorldState& state, const TaskSpec& task);

}  // namespace vat
