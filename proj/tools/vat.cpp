// Command-line front end: data generation, training, evaluation, heatmaps,
// layer sweeps, and gradient checks, driven by a key = value config file.
//
// Exit codes: 0 success, 2 config error, 3 file/format error,
// 4 contract/assertion error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "vat/analysis.hpp"
#include "vat/checkpoint.hpp"
#include "vat/dataset.hpp"
#include "vat/rng.hpp"
#include "vat/runconfig.hpp"
#include "vat/train.hpp"

namespace {

using namespace vat;

std::unique_ptr<Model> load_model_against_config(const std::string& ckpt_path,
                                                 const RunConfig& cfg) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    require_same_architecture(cfg.model, loaded.config);
    return std::move(loaded.model);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
    RunConfig cfg = load_run_config(config_path);
    const std::vector<TaskSpec> tasks = default_tasks(cfg.model.num_tasks);
    Dataset ds = generate_demos(cfg.env_config(), tasks, cfg.episodes_per_task, cfg.train.seed);
    write_dataset(ds, out_path);
    write_manifest(ds, tasks, cfg.episodes_per_task, cfg.train.seed, out_path + ".json");
    std::printf("wrote %zu episodes (%lld steps) to %s\n", ds.episodes.size(),
                static_cast<long long>(ds.total_steps()), out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    Dataset ds = read_dataset(data_path);
    Model model(cfg.model, cfg.train.seed);
    TrainResult result = train(model, ds, cfg.train, out_dir);
    std::printf("trained %lld steps, final loss %.6f\n",
                static_cast<long long>(result.steps_run), result.final_loss);
    for (const auto& p : result.checkpoint_paths) std::printf("checkpoint: %s\n", p.c_str());
    std::printf("loss curve: %s/loss.csv\n", out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, int64_t episodes,
             uint64_t seed, int64_t final_layer, int64_t jobs, bool expert) {
    RunConfig cfg = load_run_config(config_path);
    const std::vector<TaskSpec> tasks = default_tasks(cfg.model.num_tasks);
    EvalReport report;
    if (expert) {
        report = evaluate_expert(cfg.env_config(), tasks, episodes, seed);
    } else {
        if (ckpt_path.empty()) throw ConfigError("--ckpt is required unless --expert is given");
        auto model = load_model_against_config(ckpt_path, cfg);
        report = evaluate(*model, cfg.env_config(), tasks, episodes, seed, final_layer, jobs,
                          &cfg.train);
    }
    std::fputs(report.to_text().c_str(), stdout);
    return 0;
}

int cmd_heatmap(const std::string& config_path, const std::string& ckpt_path, int64_t layer,
                int64_t view, uint64_t episode_seed, int64_t task_id,
                const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    auto model = load_model_against_config(ckpt_path, cfg);
    if (view < 0 || view >= cfg.model.num_views)
        throw ConfigError("--view out of range for num_views");
    if (layer < 0 || layer >= cfg.model.resolved_final_layer())
        throw ConfigError("--layer must lie in [0, final_layer)");
    const std::vector<TaskSpec> tasks = default_tasks(cfg.model.num_tasks);
    if (task_id < 0 || task_id >= static_cast<int64_t>(tasks.size()))
        throw ConfigError("--task out of range");
    const TaskSpec& task = tasks[static_cast<size_t>(task_id)];
    std::filesystem::create_directories(out_dir);

    PickPlaceEnv env(cfg.env_config());
    NoiseSchedule schedule;
    if (cfg.model.use_diffusion)
        schedule = NoiseSchedule::linear(cfg.train.diffusion_steps, cfg.train.beta_start,
                                         cfg.train.beta_end);
    Rng sample_rng(Rng::mix(episode_seed, 0x5A5A5AULL, 1));
    auto [state, obs] = env.reset(task, episode_seed);
    bool done = false;
    int64_t decision = 0;
    while (!done) {
        ModelInput in = make_model_input(*model, obs, task.task_id);
        ForwardRecord record;
        Tensor chunk;
        if (cfg.model.use_diffusion) {
            in.timestep = 0;
            in.noisy_chunk = Tensor::zeros({cfg.model.chunk_size, cfg.model.action_dim});
            model->forward(in, nullptr, &record);  // capture attention at t = 0
            in.timestep = -1;
            in.noisy_chunk = Tensor();
            chunk = sample_diffusion_chunk(*model, in, schedule, sample_rng);
        } else {
            chunk = model->forward(in, nullptr, &record);
        }
        Tensor map = patch_heatmap(record, {layer, view});
        Tensor up = upsample_bicubic(map, cfg.model.image_h, cfg.model.image_w);
        const Tensor& image = view == 0 ? obs.view0 : obs.view1;
        Tensor blended = overlay(image, minmax_normalize(up), 0.5);
        char name[64];
        std::snprintf(name, sizeof(name), "step_%04lld.ppm", static_cast<long long>(decision));
        export_ppm(blended, out_dir + "/" + name);
        ++decision;
        for (int64_t i = 0; i < cfg.model.chunk_size && !done; ++i) {
            Tensor a = Tensor::from_data({cfg.model.action_dim},
                                         std::vector<double>(chunk.data() + i * cfg.model.action_dim,
                                                             chunk.data() + (i + 1) * cfg.model.action_dim));
            StepResult res = env.step(state, a, task);
            state = res.state;
            obs = res.obs;
            done = res.done;
        }
    }
    std::printf("wrote %lld heatmap overlays to %s\n", static_cast<long long>(decision),
                out_dir.c_str());
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& ckpt_path,
              const std::string& data_path, const std::string& layers_arg, int64_t episodes,
              uint64_t seed, int64_t finetune_steps, const std::string& out_path) {
    RunConfig cfg = load_run_config(config_path);
    auto model = load_model_against_config(ckpt_path, cfg);
    Dataset ds = read_dataset(data_path);
    std::vector<int64_t> layers;
    std::stringstream ss(layers_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            layers.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError("--layers: invalid layer '" + item + "'");
        }
    }
    if (layers.empty()) throw ConfigError("--layers lists no layers");
    SweepOptions opt;
    opt.episodes_per_task = episodes;
    opt.eval_seed = seed;
    opt.finetune_steps = finetune_steps;
    opt.batch_size = cfg.train.batch_size;
    const std::vector<TaskSpec> tasks = default_tasks(cfg.model.num_tasks);
    const std::vector<SweepRow> rows =
        layer_sweep(*model, ds, cfg.env_config(), tasks, layers, opt);
    const std::string csv = sweep_csv(rows);
    std::fputs(csv.c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw FormatError("cannot open '" + out_path + "' for writing");
        f << csv;
    }
    return 0;
}

int cmd_grad_check(const std::string& config_path, double eps) {
    RunConfig cfg = load_run_config(config_path);
    Model model(cfg.model, cfg.train.seed);
    GradCheckReport report =
        model_grad_check(model, cfg.train, eps, Rng::mix(cfg.train.seed, 0xDA7AULL, 0));
    std::printf("max_rel_error %.3e over %lld entries (worst: %s[%lld] analytic %.6e "
                "numeric %.6e)\n",
                report.max_rel_error, static_cast<long long>(report.entries_checked),
                report.worst_param.c_str(), static_cast<long long>(report.worst_index),
                report.worst_analytic, report.worst_numeric);
    if (report.max_rel_error > 1e-4) {
        std::fprintf(stderr, "gradient check failed: %.3e > 1e-4\n", report.max_rel_error);
        return 4;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VAT: vision-action transformer policy on a synthetic pick-and-place "
                 "environment"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, out_dir, ckpt_path, layers_arg;
    int64_t episodes = 100, final_layer = 0, jobs = 1, layer = 0, view = 0, task_id = 0;
    int64_t finetune_steps = 400;
    uint64_t seed = 7, episode_seed = 7;
    double eps = 3e-4;
    bool expert = false;

    auto* gen = app.add_subcommand("gen-data", "Generate expert demonstrations");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--out", out_path)->required();

    auto* tr = app.add_subcommand("train", "Train a policy on a demonstration dataset");
    tr->add_option("--config", config_path)->required();
    tr->add_option("--data", data_path)->required();
    tr->add_option("--out-dir", out_dir)->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with seeded rollouts");
    ev->add_option("--config", config_path)->required();
    ev->add_option("--ckpt", ckpt_path);
    ev->add_option("--episodes", episodes);
    ev->add_option("--seed", seed);
    ev->add_option("--final-layer", final_layer);
    ev->add_option("--jobs", jobs);
    ev->add_flag("--expert", expert, "Evaluate the scripted expert instead of a checkpoint");

    auto* hm = app.add_subcommand("heatmap", "Write attention-overlay PPM images for an episode");
    hm->add_option("--config", config_path)->required();
    hm->add_option("--ckpt", ckpt_path)->required();
    hm->add_option("--layer", layer)->required();
    hm->add_option("--view", view);
    hm->add_option("--episode-seed", episode_seed);
    hm->add_option("--task", task_id);
    hm->add_option("--out", out_dir)->required();

    auto* sw = app.add_subcommand("sweep", "Layer-skipping sweep, emitted as CSV");
    sw->add_option("--config", config_path)->required();
    sw->add_option("--ckpt", ckpt_path)->required();
    sw->add_option("--data", data_path)->required();
    sw->add_option("--layers", layers_arg)->required();
    sw->add_option("--episodes", episodes);
    sw->add_option("--seed", seed);
    sw->add_option("--finetune-steps", finetune_steps);
    sw->add_option("--out", out_path);

    auto* gc = app.add_subcommand("grad-check", "Finite-difference check of model gradients");
    gc->add_option("--config", config_path)->required();
    gc->add_option("--eps", eps);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path);
        if (tr->parsed()) return cmd_train(config_path, data_path, out_dir);
        if (ev->parsed())
            return cmd_eval(config_path, ckpt_path, episodes, seed, final_layer, jobs, expert);
        if (hm->parsed())
            return cmd_heatmap(config_path, ckpt_path, layer, view, episode_seed, task_id,
                               out_dir);
        if (sw->parsed())
            return cmd_sweep(config_path, ckpt_path, data_path, layers_arg, episodes, seed,
                             finetune_steps, out_path);
        if (gc->parsed()) return cmd_grad_check(config_path, eps);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
