#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vat/dataset.hpp"
#include "vat/env.hpp"
#include "vat/grad_check.hpp"
#include "vat/model.hpp"

namespace vat {

enum class LossKind { kL1, kDiffusion };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

struct TrainConfig {
    double lr0 = 2e-4;
    int64_t batch_size = 16;
    int64_t epochs = 10;
    int64_t checkpoint_every = 10;  // in epochs
    LossKind loss = LossKind::kL1;
    bool freeze_vision = false;
    uint64_t seed = 42;
    int64_t diffusion_steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double weight_decay = 0.0;
    int64_t max_steps = 0;   // 0 = run the full epoch budget
    double stop_loss = 0.0;  // > 0: stop when the 50-step moving average drops below

    void validate() const;
};

// Linear-beta DDPM schedule; alpha_bars are cumulative products of 1-beta.
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(int64_t steps, double beta_start, double beta_end);
    int64_t steps() const { return static_cast<int64_t>(betas.size()); }
};

// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(int64_t step, int64_t total_steps, double lr0);

// Mean absolute error over all K*L entries; shapes must match.
Tensor l1_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);

// Forward diffusion: noisy = sqrt(abar_t) * target + sqrt(1-abar_t) * eps
// with eps drawn from the seeded generator. Returns {noisy, eps}.
std::pair<Tensor, Tensor> diffuse(const Tensor& target, int64_t t, const NoiseSchedule& schedule,
                                  uint64_t seed);

// Adam with decoupled weight decay and bias-corrected moments.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<ParamEntry>& params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8, double weight_decay = 0.0);

    // Marks which parameters receive updates (frozen ones stay bit-identical).
    void set_trainable(const std::function<bool(const ParamEntry&)>& pred);
    void step(double lr);

    int64_t step_count() const { return t_; }
    const std::vector<double>& moment1(size_t i) const { return slots_[i].m; }
    const std::vector<double>& moment2(size_t i) const { return slots_[i].v; }
    std::vector<double>& moment1(size_t i) { return slots_[i].m; }
    std::vector<double>& moment2(size_t i) { return slots_[i].v; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    struct Slot {
        std::vector<double> m, v;
        bool trainable = true;
    };
    std::vector<ParamEntry>* params_;
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
};

struct CurvePoint {
    int64_t step = 0;
    int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<std::string> checkpoint_paths;
    std::vector<CurvePoint> curve;
    int64_t steps_run = 0;
    double final_loss = 0.0;
};

// Behaviour-cloning loop: seeded shuffling, cosine schedule, per-epoch
// checkpoint cadence, loss curve CSV at <out_dir>/loss.csv. Writes a final
// checkpoint <out_dir>/ckpt_final.vatc in addition to the cadence ones.
TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir);

struct TaskEvalResult {
    int64_t task_id = 0;
    int64_t successes = 0;
    int64_t episodes = 0;
    double rate = 0.0;
};

struct EvalReport {
    std::vector<TaskEvalResult> per_task;
    double mean_rate = 0.0;

    std::string to_text() const;
};

// Seeded rollouts with chunked execution: the policy emits K actions per
// observation and the env consumes all of them. Diffusion-trained models
// sample actions through the full seeded reverse chain.
EvalReport evaluate(const Model& model, const EnvConfig& env_cfg,
                    const std::vector<TaskSpec>& tasks, int64_t episodes_per_task, uint64_t seed,
                    int64_t final_layer = 0, int64_t jobs = 1,
                    const TrainConfig* diffusion_cfg = nullptr);

// Same protocol with the scripted expert instead of a model.
EvalReport evaluate_expert(const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                           int64_t episodes_per_task, uint64_t seed);

// One full reverse-diffusion sampling pass for a single observation.
Tensor sample_diffusion_chunk(const Model& model, ModelInput input, const NoiseSchedule& schedule,
                              Rng& rng);

// Builds the model input for one observation (view selection follows
// the model's configured number of views).
ModelInput make_model_input(const Model& model, const Observation& obs, int64_t task_id);

// Decoder-head-only training with the forward pass truncated at
// `final_layer`; every non-head parameter stays bit-identical. Used by
// the layer-skipping sweep.
void finetune_head(Model& model, const Dataset& ds, int64_t final_layer, int64_t steps,
                   double lr0, uint64_t seed, int64_t batch_size);

// Full-model gradient check: a seeded synthetic observation and target are
// fixed, the configured loss is evaluated, and analytic gradients of every
// registered parameter are compared against central finite differences.
GradCheckReport model_grad_check(Model& model, const TrainConfig& cfg, double eps,
                                 uint64_t data_seed, int64_t max_entries = 10000);

}  // namespace vat
