#include "vat/env.hpp"

#include <algorithm>
#include <cmath>

#include "vat/rng.hpp"

namespace vat {

namespace {

constexpr double kGoalHalf = 0.06;     // goal square half side
constexpr double kObjectRadius = 0.05; // object disk radius
constexpr double kArmLen = 0.07;       // effector cross arm half length
constexpr double kArmThick = 0.018;
constexpr double kWristHalf = 0.2;     // wrist-view window half size

constexpr double kBg[3] = {0.12, 0.12, 0.14};
constexpr double kGoalLeftColor[3] = {0.20, 0.80, 0.30};
constexpr double kGoalRightColor[3] = {0.90, 0.80, 0.20};
constexpr double kEffectorOpen[3] = {0.95, 0.95, 0.95};
constexpr double kEffectorClosed[3] = {0.65, 0.65, 0.70};

const double kObjectPalette[4][3] = {
    {0.90, 0.20, 0.15},
    {0.20, 0.40, 0.95},
    {0.85, 0.30, 0.80},
    {0.25, 0.80, 0.80},
};

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double dist(double ax, double ay, double bx, double by) {
    const double dx = ax - bx, dy = ay - by;
    return std::sqrt(dx * dx + dy * dy);
}

// Rasterizes the scene into img for a world window centered at (cx, cy)
// with half side `half`. Flat shading, no anti-aliasing: every pixel takes
// the color of the topmost shape covering its center.
void rasterize(Tensor& img, const WorldState& s, const TaskSpec& task, double cx, double cy,
               double half) {
    const int64_t h = img.dim(1), w = img.dim(2);
    const double* oc = kObjectPalette[task.object_color_id & 3];
    const double* ec = s.gripper >= 0.5 ? kEffectorClosed : kEffectorOpen;
    const double ct = std::cos(s.theta), st = std::sin(s.theta);
    double* data = img.data();
    const int64_t plane = h * w;
    for (int64_t i = 0; i < h; ++i) {
        const double y = cy - half + (static_cast<double>(i) + 0.5) * (2.0 * half / h);
        for (int64_t j = 0; j < w; ++j) {
            const double x = cx - half + (static_cast<double>(j) + 0.5) * (2.0 * half / w);
            const double* color = kBg;
            if (std::abs(x - s.glx) <= kGoalHalf && std::abs(y - s.gly) <= kGoalHalf)
                color = kGoalLeftColor;
            else if (std::abs(x - s.grx) <= kGoalHalf && std::abs(y - s.gry) <= kGoalHalf)
                color = kGoalRightColor;
            const double odx = x - s.ox, ody = y - s.oy;
            if (odx * odx + ody * ody <= kObjectRadius * kObjectRadius) color = oc;
            // effector cross in its rotated frame
            const double rx = x - s.ex, ry = y - s.ey;
            const double u = ct * rx + st * ry;
            const double v = -st * rx + ct * ry;
            if ((std::abs(u) <= kArmLen && std::abs(v) <= kArmThick) ||
                (std::abs(v) <= kArmLen && std::abs(u) <= kArmThick))
                color = ec;
            const int64_t px = i * w + j;
            data[px] = color[0];
            data[plane + px] = color[1];
            data[2 * plane + px] = color[2];
        }
    }
}

}  // namespace

std::vector<TaskSpec> default_tasks(int64_t num_tasks) {
    std::vector<TaskSpec> tasks;
    for (int64_t i = 0; i < num_tasks; ++i)
        tasks.push_back({i, (i % 2 == 0) ? Target::kLeft : Target::kRight, i / 2});
    return tasks;
}

Tensor PickPlaceEnv::render_full(const WorldState& s, const TaskSpec& task) const {
    Tensor img = Tensor::zeros({3, cfg_.image_h, cfg_.image_w});
    rasterize(img, s, task, 0.5, 0.5, 0.5);
    return img;
}

Tensor PickPlaceEnv::render_wrist(const WorldState& s, const TaskSpec& task) const {
    Tensor img = Tensor::zeros({3, cfg_.image_h, cfg_.image_w});
    const double cx = clampd(s.ex, kWristHalf, 1.0 - kWristHalf);
    const double cy = clampd(s.ey, kWristHalf, 1.0 - kWristHalf);
    rasterize(img, s, task, cx, cy, kWristHalf);
    return img;
}

Observation PickPlaceEnv::observe(const WorldState& s, const TaskSpec& task) const {
    Observation obs;
    obs.view0 = render_full(s, task);
    obs.view1 = render_wrist(s, task);
    obs.proprio = Tensor::from_data({4}, {s.ex, s.ey, s.theta, s.gripper});
    return obs;
}

std::pair<WorldState, Observation> PickPlaceEnv::reset(const TaskSpec& task, uint64_t seed) const {
    // The stream is a function of the seed alone; the task only selects
    // color and target, so an ambiguity pair gets identical scenes.
    Rng rng(seed);
    WorldState s;
    s.ex = rng.uniform(0.15, 0.85);
    s.ey = rng.uniform(0.15, 0.85);
    s.theta = rng.uniform(-0.6, 0.6);
    s.gripper = 0.0;
    s.held = false;
    s.step_index = 0;
    do {
        s.ox = rng.uniform(0.15, 0.85);
        s.oy = rng.uniform(0.15, 0.85);
    } while (dist(s.ox, s.oy, s.ex, s.ey) < 0.12);
    const double sep = cfg_.min_separation;
    do {
        s.glx = rng.uniform(0.12, 0.38);
        s.gly = rng.uniform(0.15, 0.85);
    } while (dist(s.glx, s.gly, s.ox, s.oy) < sep);
    do {
        s.grx = rng.uniform(0.62, 0.88);
        s.gry = rng.uniform(0.15, 0.85);
    } while (dist(s.grx, s.gry, s.ox, s.oy) < sep ||
             dist(s.grx, s.gry, s.glx, s.gly) < sep);
    return {s, observe(s, task)};
}

StepResult PickPlaceEnv::step(const WorldState& state, const Tensor& action,
                              const TaskSpec& task) const {
    if (action.numel() != kEnvActionDim)
        throw DimensionError("env action must have " + std::to_string(kEnvActionDim) +
                             " entries, got " + shape_str(action.shape()));
    for (int64_t i = 0; i < action.numel(); ++i)
        if (!std::isfinite(action.data()[i]))
            throw ContractError("non-finite env action");

    const double dx = clampd(action.data()[0], -kMaxDelta, kMaxDelta);
    const double dy = clampd(action.data()[1], -kMaxDelta, kMaxDelta);
    const double dth = clampd(action.data()[2], -kMaxDTheta, kMaxDTheta);
    const double cmd = clampd(action.data()[3], 0.0, 1.0);

    WorldState s = state;
    s.ex = clampd(s.ex + dx, 0.0, 1.0);
    s.ey = clampd(s.ey + dy, 0.0, 1.0);
    s.theta += dth;

    const bool was_closed = state.gripper >= 0.5;
    const bool now_closed = cmd >= 0.5;
    if (s.held) {
        if (was_closed && !now_closed) {
            s.held = false;  // release in place
        } else {
            s.ox = s.ex;
            s.oy = s.ey;
        }
    } else if (!was_closed && now_closed &&
               dist(s.ex, s.ey, s.ox, s.oy) <= kGraspRadius) {
        s.held = true;
        s.ox = s.ex;
        s.oy = s.ey;
    }
    s.gripper = cmd;
    s.step_index = state.step_index + 1;

    const double tx = task.target == Target::kLeft ? s.glx : s.grx;
    const double ty = task.target == Target::kLeft ? s.gly : s.gry;
    const bool success =
        !s.held && s.gripper < 0.5 && dist(s.ox, s.oy, tx, ty) <= kSuccessRadius;
    const bool done = success || s.step_index >= cfg_.max_steps;
    return {s, observe(s, task), done, success};
}

Tensor expert_action(const WorldState& s, const TaskSpec& task) {
    double dx = 0.0, dy = 0.0, cmd = 0.0;
    const double dth = clampd(-s.theta, -kMaxDTheta, kMaxDTheta);
    if (!s.held) {
        const double gx = s.ox - s.ex, gy = s.oy - s.ey;
        if (std::sqrt(gx * gx + gy * gy) > 0.035) {
            dx = clampd(gx, -kMaxDelta, kMaxDelta);
            dy = clampd(gy, -kMaxDelta, kMaxDelta);
            cmd = 0.0;
        } else {
            cmd = 1.0;  // close on the object
        }
    } else {
        const double tx = task.target == Target::kLeft ? s.glx : s.grx;
        const double ty = task.target == Target::kLeft ? s.gly : s.gry;
        const double gx = tx - s.ex, gy = ty - s.ey;
        if (std::sqrt(gx * gx + gy * gy) > 0.03) {
            dx = clampd(gx, -kMaxDelta, kMaxDelta);
            dy = clampd(gy, -kMaxDelta, kMaxDelta);
            cmd = 1.0;  // keep holding
        } else {
            cmd = 0.0;  // release at the target
        }
    }
    return Tensor::from_data({kEnvActionDim}, {dx, dy, dth, cmd});
}

}  // namespace vat
