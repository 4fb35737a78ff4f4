#include "vat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "vat/checkpoint.hpp"
#include "vat/rng.hpp"

namespace vat {

std::string to_string(LossKind k) { return k == LossKind::kL1 ? "l1" : "diffusion"; }

LossKind loss_from_string(const std::string& s) {
    if (s == "l1") return LossKind::kL1;
    if (s == "diffusion") return LossKind::kDiffusion;
    throw ConfigError("unknown loss '" + s + "' (expected l1|diffusion)");
}

void TrainConfig::validate() const {
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (checkpoint_every < 1 || checkpoint_every > epochs)
        throw ConfigError("checkpoint_every must lie in [1, epochs]");
    if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be >= 1");
    if (beta_start <= 0.0 || beta_end <= beta_start || beta_end >= 1.0)
        throw ConfigError("betas must satisfy 0 < beta_start < beta_end < 1");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

NoiseSchedule NoiseSchedule::linear(int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("diffusion_steps must be >= 1");
    NoiseSchedule s;
    s.betas.resize(static_cast<size_t>(steps));
    s.alpha_bars.resize(static_cast<size_t>(steps));
    double abar = 1.0;
    for (int64_t t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        abar *= 1.0 - beta;
        s.betas[static_cast<size_t>(t)] = beta;
        s.alpha_bars[static_cast<size_t>(t)] = abar;
    }
    return s;
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0) {
    if (step < 0 || step > total_steps) throw ContractError("cosine_lr step out of range");
    if (total_steps == 0) return lr0;
    const double v = lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                 static_cast<double>(total_steps)));
    return std::max(v, 0.0);
}

Tensor l1_loss(const Tensor& pred, const Tensor& target, Tape* tape) {
    return mean_abs_error(pred, target, tape);
}

std::pair<Tensor, Tensor> diffuse(const Tensor& target, int64_t t, const NoiseSchedule& schedule,
                                  uint64_t seed) {
    if (t < 0 || t >= schedule.steps())
        throw IndexError("diffusion timestep " + std::to_string(t) + " out of range [0," +
                         std::to_string(schedule.steps()) + ")");
    Rng rng(seed);
    const double abar = schedule.alpha_bars[static_cast<size_t>(t)];
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Tensor eps = Tensor::zeros(target.shape());
    Tensor noisy = Tensor::zeros(target.shape());
    for (int64_t i = 0; i < target.numel(); ++i) {
        eps.data()[i] = rng.normal();
        noisy.data()[i] = a * target.data()[i] + b * eps.data()[i];
    }
    return {noisy, eps};
}

AdamOptimizer::AdamOptimizer(std::vector<ParamEntry>& params, double beta1, double beta2,
                             double eps, double weight_decay)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    slots_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        slots_[i].m.assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
        slots_[i].v.assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
    }
}

void AdamOptimizer::set_trainable(const std::function<bool(const ParamEntry&)>& pred) {
    for (size_t i = 0; i < params_->size(); ++i) slots_[i].trainable = pred((*params_)[i]);
}

void AdamOptimizer::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
        Slot& slot = slots_[i];
        if (!slot.trainable) continue;
        Tensor& p = (*params_)[i].tensor;
        if (!p.has_grad()) continue;
        const std::vector<double>& g = p.grad_or_empty();
        double* val = p.data();
        for (size_t j = 0; j < slot.m.size(); ++j) {
            slot.m[j] = beta1_ * slot.m[j] + (1.0 - beta1_) * g[j];
            slot.v[j] = beta2_ * slot.v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = slot.m[j] / bc1;
            const double vhat = slot.v[j] / bc2;
            val[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * val[j]);
        }
    }
}

ModelInput make_model_input(const Model& model, const Observation& obs, int64_t task_id) {
    ModelInput in;
    in.task_id = task_id;
    in.views.push_back(obs.view0);
    if (model.config().num_views > 1) in.views.push_back(obs.view1);
    if (model.config().proprio_dim > 0) in.proprio = obs.proprio;
    return in;
}

namespace {

struct Sample {
    int32_t episode = 0;
    int32_t t0 = 0;
};

Tensor view_tensor(const Episode& ep, const std::vector<float>& buf, int64_t t, int64_t h,
                   int64_t w) {
    (void)ep;
    const int64_t frame = 3 * h * w;
    std::vector<double> vals(static_cast<size_t>(frame));
    const float* src = buf.data() + static_cast<size_t>(t * frame);
    for (int64_t i = 0; i < frame; ++i) vals[static_cast<size_t>(i)] = static_cast<double>(src[i]);
    return Tensor::from_data({3, h, w}, std::move(vals));
}

// Target chunk of K actions starting at t0, padded by repeating the last
// recorded action past the end of the episode.
Tensor target_chunk(const Episode& ep, int64_t t0, int64_t k, int64_t l) {
    std::vector<double> vals(static_cast<size_t>(k * l));
    for (int64_t i = 0; i < k; ++i) {
        const int64_t t = std::min(t0 + i, ep.n_steps - 1);
        for (int64_t j = 0; j < l; ++j)
            vals[static_cast<size_t>(i * l + j)] =
                static_cast<double>(ep.action[static_cast<size_t>(t * l + j)]);
    }
    return Tensor::from_data({k, l}, std::move(vals));
}

ModelInput sample_input(const Model& model, const Dataset& ds, const Sample& s) {
    const Episode& ep = ds.episodes[static_cast<size_t>(s.episode)];
    ModelInput in;
    in.task_id = ep.task_id;
    in.views.push_back(view_tensor(ep, ep.view0, s.t0, ds.image_h, ds.image_w));
    if (model.config().num_views > 1)
        in.views.push_back(view_tensor(ep, ep.view1, s.t0, ds.image_h, ds.image_w));
    if (model.config().proprio_dim > 0) {
        std::vector<double> p(static_cast<size_t>(ds.proprio_dim));
        for (int64_t j = 0; j < ds.proprio_dim; ++j)
            p[static_cast<size_t>(j)] =
                static_cast<double>(ep.proprio[static_cast<size_t>(s.t0 * ds.proprio_dim + j)]);
        in.proprio = Tensor::from_data({ds.proprio_dim}, std::move(p));
    }
    return in;
}

}  // namespace

TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir) {
    cfg.validate();
    const ModelConfig& mc = model.config();
    if (ds.action_dim != mc.action_dim)
        throw ConfigError("dataset action_dim " + std::to_string(ds.action_dim) +
                          " does not match model action_dim " + std::to_string(mc.action_dim));
    if (ds.image_h != mc.image_h || ds.image_w != mc.image_w)
        throw ConfigError("dataset image size does not match model config");
    if (mc.proprio_dim > 0 && ds.proprio_dim != mc.proprio_dim)
        throw ConfigError("dataset proprio_dim " + std::to_string(ds.proprio_dim) +
                          " does not match model proprio_dim " + std::to_string(mc.proprio_dim));
    if (mc.num_views > 2) throw ConfigError("dataset provides at most 2 views");
    if (ds.episodes.empty()) throw ConfigError("dataset has no episodes");
    if ((cfg.loss == LossKind::kDiffusion) != mc.use_diffusion)
        throw ConfigError("loss = diffusion requires use_diffusion = true (and vice versa)");

    std::filesystem::create_directories(out_dir);

    std::vector<Sample> samples;
    for (size_t e = 0; e < ds.episodes.size(); ++e)
        for (int64_t t = 0; t < ds.episodes[e].n_steps; ++t)
            samples.push_back({static_cast<int32_t>(e), static_cast<int32_t>(t)});

    const int64_t steps_per_epoch = static_cast<int64_t>(samples.size()) / cfg.batch_size;
    if (steps_per_epoch == 0)
        throw ConfigError("batch_size exceeds the number of samples in the dataset");
    int64_t total_steps = steps_per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

    AdamOptimizer opt(model.parameters(), 0.9, 0.999, 1e-8, cfg.weight_decay);
    if (cfg.freeze_vision)
        opt.set_trainable([](const ParamEntry& p) { return p.group != ParamGroup::kVision; });

    NoiseSchedule schedule;
    if (cfg.loss == LossKind::kDiffusion)
        schedule = NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);

    Rng shuffle_rng(Rng::mix(cfg.seed, 0xC0FFEEULL, 0));
    Rng diffusion_rng(Rng::mix(cfg.seed, 0xD1FF05ULL, 0));

    TrainResult result;
    std::deque<double> window;
    double window_sum = 0.0;
    int64_t global_step = 0;
    bool stopped = false;
    Tape tape;

    for (int64_t epoch = 1; epoch <= cfg.epochs && !stopped; ++epoch) {
        // Seeded Fisher-Yates shuffle.
        for (size_t i = samples.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(shuffle_rng.uniform_index(i));
            std::swap(samples[i - 1], samples[j]);
        }
        for (int64_t b = 0; b < steps_per_epoch && !stopped; ++b) {
            model.zero_grads();
            double batch_loss = 0.0;
            const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
            for (int64_t s = 0; s < cfg.batch_size; ++s) {
                const Sample& sm = samples[static_cast<size_t>(b * cfg.batch_size + s)];
                const Episode& ep = ds.episodes[static_cast<size_t>(sm.episode)];
                ModelInput in = sample_input(model, ds, sm);
                Tensor target = target_chunk(ep, sm.t0, mc.chunk_size, mc.action_dim);
                Tensor loss;
                if (cfg.loss == LossKind::kL1) {
                    Tensor pred = model.forward(in, &tape);
                    loss = l1_loss(pred, target, &tape);
                } else {
                    const int64_t t = static_cast<int64_t>(
                        diffusion_rng.uniform_index(static_cast<uint64_t>(schedule.steps())));
                    auto [noisy, eps] = diffuse(target, t, schedule, diffusion_rng.next_u64());
                    in.timestep = t;
                    in.noisy_chunk = noisy;
                    Tensor pred_eps = model.forward(in, &tape);
                    loss = mean_sq_error(pred_eps, eps, &tape);
                }
                backward(loss, tape, inv_b);
                tape.reset();
                batch_loss += loss.item() * inv_b;
            }
            const double lr = cosine_lr(global_step, total_steps, cfg.lr0);
            opt.step(lr);
            ++global_step;
            result.curve.push_back({global_step, epoch, lr, batch_loss});

            window.push_back(batch_loss);
            window_sum += batch_loss;
            if (window.size() > 50) {
                window_sum -= window.front();
                window.pop_front();
            }
            if (cfg.stop_loss > 0.0 && window.size() == 50 &&
                window_sum / 50.0 < cfg.stop_loss)
                stopped = true;
            if (cfg.max_steps > 0 && global_step >= cfg.max_steps) stopped = true;
        }
        if (epoch % cfg.checkpoint_every == 0 && !stopped) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04lld.vatc",
                          static_cast<long long>(epoch));
            const std::string path = out_dir + "/" + name;
            save_checkpoint(path, model);
            result.checkpoint_paths.push_back(path);
        }
    }

    const std::string final_path = out_dir + "/ckpt_final.vatc";
    save_checkpoint(final_path, model);
    result.checkpoint_paths.push_back(final_path);
    result.steps_run = global_step;
    result.final_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;

    std::ofstream csv(out_dir + "/loss.csv", std::ios::trunc);
    if (!csv) throw FormatError("cannot write loss curve to " + out_dir);
    csv << "step,epoch,lr,loss\n";
    for (const CurvePoint& p : result.curve) {
        char line[128];
        std::snprintf(line, sizeof(line), "%lld,%lld,%.10e,%.10e\n",
                      static_cast<long long>(p.step), static_cast<long long>(p.epoch), p.lr,
                      p.loss);
        csv << line;
    }
    return result;
}

void finetune_head(Model& model, const Dataset& ds, int64_t final_layer, int64_t steps,
                   double lr0, uint64_t seed, int64_t batch_size) {
    const ModelConfig& mc = model.config();
    std::vector<Sample> samples;
    for (size_t e = 0; e < ds.episodes.size(); ++e)
        for (int64_t t = 0; t < ds.episodes[e].n_steps; ++t)
            samples.push_back({static_cast<int32_t>(e), static_cast<int32_t>(t)});
    if (samples.empty()) throw ConfigError("dataset has no samples");

    AdamOptimizer opt(model.parameters());
    opt.set_trainable(
        [](const ParamEntry& p) { return p.name.rfind("head.", 0) == 0; });

    Rng rng(Rng::mix(seed, 0xF17EULL, static_cast<uint64_t>(final_layer)));
    Tape tape;
    const double inv_b = 1.0 / static_cast<double>(batch_size);
    for (int64_t step = 0; step < steps; ++step) {
        model.zero_grads();
        for (int64_t s = 0; s < batch_size; ++s) {
            const Sample& sm =
                samples[static_cast<size_t>(rng.uniform_index(samples.size()))];
            const Episode& ep = ds.episodes[static_cast<size_t>(sm.episode)];
            ModelInput in = sample_input(model, ds, sm);
            Tensor target = target_chunk(ep, sm.t0, mc.chunk_size, mc.action_dim);
            Tensor pred = model.forward(in, &tape, nullptr, final_layer);
            Tensor loss = l1_loss(pred, target, &tape);
            backward(loss, tape, inv_b);
            tape.reset();
        }
        opt.step(cosine_lr(step, steps, lr0));
    }
}

GradCheckReport model_grad_check(Model& model, const TrainConfig& cfg, double eps,
                                 uint64_t data_seed, int64_t max_entries) {
    const ModelConfig& mc = model.config();
    Rng rng(data_seed);
    ModelInput in;
    in.task_id = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(mc.num_tasks)));
    for (int64_t v = 0; v < mc.num_views; ++v) {
        Tensor img = Tensor::zeros({3, mc.image_h, mc.image_w});
        for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform();
        in.views.push_back(img);
    }
    if (mc.proprio_dim > 0) {
        Tensor p = Tensor::zeros({mc.proprio_dim});
        for (int64_t i = 0; i < p.numel(); ++i) p.data()[i] = rng.uniform(-1.0, 1.0);
        in.proprio = p;
    }
    Tensor target = Tensor::zeros({mc.chunk_size, mc.action_dim});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.normal();

    Tensor ref = target;
    if (mc.use_diffusion) {
        const NoiseSchedule schedule =
            NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
        const int64_t t = schedule.steps() / 2;
        auto [noisy, eps_t] = diffuse(target, t, schedule, rng.next_u64());
        in.timestep = t;
        in.noisy_chunk = noisy;
        ref = eps_t;
    }

    const bool use_l1 = !mc.use_diffusion;
    auto f = [&model, &in, &ref, use_l1](Tape* tape) {
        Tensor pred = model.forward(in, tape);
        return use_l1 ? l1_loss(pred, ref, tape) : mean_sq_error(pred, ref, tape);
    };
    std::vector<std::pair<std::string, Tensor>> params;
    for (auto& p : model.parameters()) params.emplace_back(p.name, p.tensor);
    GradCheckOptions opt;
    opt.eps = eps;
    opt.max_entries = max_entries;
    opt.sample_seed = Rng::mix(data_seed, 0x6AD5ULL, 0);
    return grad_check(f, params, opt);
}

Tensor sample_diffusion_chunk(const Model& model, ModelInput input, const NoiseSchedule& schedule,
                              Rng& rng) {
    const ModelConfig& mc = model.config();
    const int64_t k = mc.chunk_size, l = mc.action_dim;
    Tensor x = Tensor::zeros({k, l});
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
    for (int64_t t = schedule.steps() - 1; t >= 0; --t) {
        input.timestep = t;
        input.noisy_chunk = x;
        Tensor eps = model.forward(input);
        const double beta = schedule.betas[static_cast<size_t>(t)];
        const double alpha = 1.0 - beta;
        const double abar = schedule.alpha_bars[static_cast<size_t>(t)];
        const double abar_prev = t > 0 ? schedule.alpha_bars[static_cast<size_t>(t - 1)] : 1.0;
        const double coef = beta / std::sqrt(1.0 - abar);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        const double sigma = t > 0 ? std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta) : 0.0;
        Tensor next = Tensor::zeros({k, l});
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double mean = inv_sqrt_alpha * (x.data()[i] - coef * eps.data()[i]);
            next.data()[i] = mean + (t > 0 ? sigma * rng.normal() : 0.0);
        }
        x = next;
    }
    return x;
}

namespace {

struct EpisodeOutcome {
    bool success = false;
};

EpisodeOutcome run_policy_episode(const Model& model, const PickPlaceEnv& env,
                                  const TaskSpec& task, uint64_t ep_seed, int64_t final_layer,
                                  const NoiseSchedule* schedule) {
    auto [state, obs] = env.reset(task, ep_seed);
    Rng sample_rng(Rng::mix(ep_seed, 0x5A5A5AULL, 1));
    const int64_t k = model.config().chunk_size;
    bool done = false, success = false;
    while (!done) {
        ModelInput in = make_model_input(model, obs, task.task_id);
        Tensor chunk;
        if (schedule) {
            chunk = sample_diffusion_chunk(model, in, *schedule, sample_rng);
        } else {
            chunk = model.forward(in, nullptr, nullptr, final_layer);
        }
        for (int64_t i = 0; i < k && !done; ++i) {
            Tensor a = slice_rows(chunk, i, i + 1);
            Tensor a_flat = Tensor::from_data({model.config().action_dim}, a.values());
            StepResult res = env.step(state, a_flat, task);
            state = res.state;
            obs = res.obs;
            done = res.done;
            success = res.success;
        }
    }
    return {success};
}

}  // namespace

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "task_id,successes,episodes,rate\n";
    for (const auto& t : per_task) {
        char line[96];
        std::snprintf(line, sizeof(line), "%lld,%lld,%lld,%.4f\n",
                      static_cast<long long>(t.task_id), static_cast<long long>(t.successes),
                      static_cast<long long>(t.episodes), t.rate);
        os << line;
    }
    char mean_line[48];
    std::snprintf(mean_line, sizeof(mean_line), "mean,,,%.4f\n", mean_rate);
    os << mean_line;
    return os.str();
}

EvalReport evaluate(const Model& model, const EnvConfig& env_cfg,
                    const std::vector<TaskSpec>& tasks, int64_t episodes_per_task, uint64_t seed,
                    int64_t final_layer, int64_t jobs, const TrainConfig* diffusion_cfg) {
    PickPlaceEnv env(env_cfg);
    NoiseSchedule schedule;
    const bool diffusion = model.config().use_diffusion;
    if (diffusion) {
        const TrainConfig defaults{};
        const TrainConfig& c = diffusion_cfg ? *diffusion_cfg : defaults;
        schedule = NoiseSchedule::linear(c.diffusion_steps, c.beta_start, c.beta_end);
    }

    struct Job {
        size_t task_index;
        int64_t episode;
        uint64_t seed;
        bool success = false;
    };
    std::vector<Job> jobs_list;
    for (size_t ti = 0; ti < tasks.size(); ++ti)
        for (int64_t e = 0; e < episodes_per_task; ++e)
            jobs_list.push_back({ti, e,
                                 Rng::mix(seed, static_cast<uint64_t>(tasks[ti].task_id),
                                          static_cast<uint64_t>(e))});

    const int64_t workers = std::max<int64_t>(1, jobs);
    auto run_range = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            Job& j = jobs_list[i];
            j.success = run_policy_episode(model, env, tasks[j.task_index], j.seed, final_layer,
                                           diffusion ? &schedule : nullptr)
                            .success;
        }
    };
    if (workers == 1) {
        run_range(0, jobs_list.size());
    } else {
        std::vector<std::thread> pool;
        const size_t n = jobs_list.size();
        const size_t chunk = (n + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
        for (int64_t w = 0; w < workers; ++w) {
            const size_t b = std::min(n, static_cast<size_t>(w) * chunk);
            const size_t e = std::min(n, b + chunk);
            if (b < e) pool.emplace_back(run_range, b, e);
        }
        for (auto& th : pool) th.join();
    }

    EvalReport report;
    report.per_task.resize(tasks.size());
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        report.per_task[ti].task_id = tasks[ti].task_id;
        report.per_task[ti].episodes = episodes_per_task;
    }
    for (const Job& j : jobs_list)
        if (j.success) ++report.per_task[j.task_index].successes;
    double total = 0.0;
    for (auto& t : report.per_task) {
        t.rate = t.episodes ? static_cast<double>(t.successes) / static_cast<double>(t.episodes)
                            : 0.0;
        total += t.rate;
    }
    report.mean_rate = tasks.empty() ? 0.0 : total / static_cast<double>(tasks.size());
    return report;
}

EvalReport evaluate_expert(const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                           int64_t episodes_per_task, uint64_t seed) {
    PickPlaceEnv env(env_cfg);
    EvalReport report;
    report.per_task.resize(tasks.size());
    double total = 0.0;
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        auto& pt = report.per_task[ti];
        pt.task_id = tasks[ti].task_id;
        pt.episodes = episodes_per_task;
        for (int64_t e = 0; e < episodes_per_task; ++e) {
            const uint64_t ep_seed = Rng::mix(seed, static_cast<uint64_t>(tasks[ti].task_id),
                                              static_cast<uint64_t>(e));
            auto [state, obs] = env.reset(tasks[ti], ep_seed);
            bool done = false, success = false;
            while (!done) {
                StepResult res = env.step(state, expert_action(state, tasks[ti]), tasks[ti]);
                state = res.state;
                obs = res.obs;
                done = res.done;
                success = res.success;
            }
            if (success) ++pt.successes;
        }
        pt.rate = episodes_per_task
                      ? static_cast<double>(pt.successes) / static_cast<double>(episodes_per_task)
                      : 0.0;
        total += pt.rate;
    }
    report.mean_rate = tasks.empty() ? 0.0 : total / static_cast<double>(tasks.size());
    return report;
}

}  // namespace vat
