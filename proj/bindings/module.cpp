#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vat/analysis.hpp"
#include "vat/checkpoint.hpp"
#include "vat/dataset.hpp"
#include "vat/rng.hpp"
#include "vat/runconfig.hpp"
#include "vat/train.hpp"

namespace py = pybind11;
using namespace vat;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
    Shape shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
    return arr;
}

ModelInput input_from(const Model& model, const std::vector<DoubleArray>& views, int64_t task_id,
                      const py::object& proprio, int64_t timestep, const py::object& noisy) {
    ModelInput in;
    in.task_id = task_id;
    for (const auto& v : views) in.views.push_back(tensor_from(v));
    if (!proprio.is_none()) in.proprio = tensor_from(proprio.cast<DoubleArray>());
    in.timestep = timestep;
    if (!noisy.is_none()) in.noisy_chunk = tensor_from(noisy.cast<DoubleArray>());
    return in;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    py::list per_task;
    for (const auto& t : r.per_task) {
        py::dict e;
        e["task_id"] = t.task_id;
        e["successes"] = t.successes;
        e["episodes"] = t.episodes;
        e["rate"] = t.rate;
        per_task.append(e);
    }
    d["per_task"] = per_task;
    d["mean_rate"] = r.mean_rate;
    return d;
}

// Stateful environment handle for interactive use from python.
struct PyEnv {
    PickPlaceEnv env;
    TaskSpec task;
    WorldState state;
    Observation obs;
    bool done = false;
    bool success = false;

    PyEnv(const std::string& config_text, int64_t task_id, uint64_t seed)
        : env(parse_run_config_text(config_text).env_config()) {
        const RunConfig cfg = parse_run_config_text(config_text);
        const auto tasks = default_tasks(cfg.model.num_tasks);
        if (task_id < 0 || task_id >= static_cast<int64_t>(tasks.size()))
            throw IndexError("task_id out of range");
        task = tasks[static_cast<size_t>(task_id)];
        auto [s, o] = env.reset(task, seed);
        state = s;
        obs = o;
    }

    py::dict observation() const {
        py::dict d;
        d["view0"] = array_from(obs.view0);
        d["view1"] = array_from(obs.view1);
        d["proprio"] = array_from(obs.proprio);
        d["done"] = done;
        d["success"] = success;
        return d;
    }

    py::dict step(const DoubleArray& action) {
        StepResult res = env.step(state, tensor_from(action), task);
        state = res.state;
        obs = res.obs;
        done = res.done;
        success = res.success;
        return observation();
    }

    py::array_t<double> expert() const { return array_from(expert_action(state, task)); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "VAT policy core: tensor ops, the model, the synthetic environment, training "
              "and analysis";

    // --- numerics ---
    m.def("matmul", [](const DoubleArray& a, const DoubleArray& b) {
        return array_from(matmul(tensor_from(a), tensor_from(b)));
    });
    m.def("softmax", [](const DoubleArray& x) {
        return array_from(softmax_lastdim(tensor_from(x)));
    });
    m.def("gelu", [](const DoubleArray& x) { return array_from(gelu(tensor_from(x))); });
    m.def(
        "layer_norm",
        [](const DoubleArray& x, const DoubleArray& gain, const DoubleArray& bias, double eps) {
            return array_from(layer_norm(tensor_from(x), tensor_from(gain), tensor_from(bias), eps));
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-6);
    m.def("attention", [](const DoubleArray& q, const DoubleArray& k, const DoubleArray& v) {
        auto [out, scores] = scaled_dot_attention(tensor_from(q), tensor_from(k), tensor_from(v));
        return py::make_tuple(array_from(out), array_from(scores));
    });
    m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("lr0"));

    // --- analysis ---
    m.def("upsample_bicubic", [](const DoubleArray& map, int64_t h, int64_t w) {
        return array_from(upsample_bicubic(tensor_from(map), h, w));
    });
    m.def("minmax_normalize",
          [](const DoubleArray& map) { return array_from(minmax_normalize(tensor_from(map))); });
    m.def(
        "overlay",
        [](const DoubleArray& image, const DoubleArray& map, double alpha) {
            return array_from(overlay(tensor_from(image), tensor_from(map), alpha));
        },
        py::arg("image"), py::arg("map"), py::arg("alpha") = 0.5);
    m.def("export_ppm", [](const DoubleArray& image, const std::string& path) {
        export_ppm(tensor_from(image), path);
    });

    // --- model ---
    py::class_<ForwardRecord>(m, "ForwardRecord")
        .def_readonly("final_layer", &ForwardRecord::final_layer)
        .def_readonly("num_views", &ForwardRecord::num_views)
        .def("scores",
             [](const ForwardRecord& r, int64_t layer) {
                 if (layer < 0 || layer >= static_cast<int64_t>(r.cross_scores.size()))
                     throw IndexError("layer out of range");
                 return array_from(r.cross_scores[static_cast<size_t>(layer)]);
             })
        .def("vision_tokens",
             [](const ForwardRecord& r, int64_t layer) {
                 if (layer < 0 || layer >= static_cast<int64_t>(r.vision_tokens.size()))
                     throw IndexError("layer out of range");
                 return array_from(r.vision_tokens[static_cast<size_t>(layer)]);
             })
        .def("action_tokens",
             [](const ForwardRecord& r, int64_t layer) {
                 if (layer < 0 || layer >= static_cast<int64_t>(r.action_tokens.size()))
                     throw IndexError("layer out of range");
                 return array_from(r.action_tokens[static_cast<size_t>(layer)]);
             })
        .def("heatmap", [](const ForwardRecord& r, int64_t layer, int64_t view) {
            return array_from(patch_heatmap(r, {layer, view}));
        });

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& config_text, uint64_t seed) {
                 // Accepts either pure architecture keys or a full run config.
                 ModelConfig cfg = parse_run_config_text(config_text).model;
                 return new Model(cfg, seed);
             }),
             py::arg("config_text"), py::arg("seed") = 0)
        .def("param_count", &Model::param_count)
        .def("config_text", [](const Model& m_) { return m_.config().to_text(); })
        .def(
            "forward",
            [](const Model& self, const std::vector<DoubleArray>& views, int64_t task_id,
               const py::object& proprio, int64_t timestep, const py::object& noisy_chunk,
               int64_t final_layer, bool with_record) {
                ModelInput in =
                    input_from(self, views, task_id, proprio, timestep, noisy_chunk);
                ForwardRecord record;
                Tensor chunk = self.forward(in, nullptr, with_record ? &record : nullptr,
                                            final_layer);
                if (!with_record)
                    return py::make_tuple(array_from(chunk), py::none());
                return py::make_tuple(array_from(chunk), py::cast(record));
            },
            py::arg("views"), py::arg("task_id") = 0, py::arg("proprio") = py::none(),
            py::arg("timestep") = -1, py::arg("noisy_chunk") = py::none(),
            py::arg("final_layer") = 0, py::arg("with_record") = false);

    m.def("load_model", [](const std::string& path) {
        LoadedCheckpoint loaded = load_checkpoint(path);
        return loaded.model.release();
    });

    py::class_<PyEnv>(m, "Env")
        .def(py::init<const std::string&, int64_t, uint64_t>(), py::arg("config_text"),
             py::arg("task_id") = 0, py::arg("seed") = 7)
        .def("observation", &PyEnv::observation)
        .def("step", &PyEnv::step)
        .def("expert_action", &PyEnv::expert);

    // --- workflows ---
    m.def("gen_data", [](const std::string& config_text, const std::string& out_path) {
        RunConfig cfg = parse_run_config_text(config_text);
        const auto tasks = default_tasks(cfg.model.num_tasks);
        Dataset ds = generate_demos(cfg.env_config(), tasks, cfg.episodes_per_task,
                                    cfg.train.seed);
        write_dataset(ds, out_path);
        write_manifest(ds, tasks, cfg.episodes_per_task, cfg.train.seed, out_path + ".json");
        py::dict d;
        d["episodes"] = ds.episodes.size();
        d["steps"] = ds.total_steps();
        return d;
    });
    m.def("dataset_info", [](const std::string& path) {
        Dataset ds = read_dataset(path);
        py::dict d;
        d["image_h"] = ds.image_h;
        d["image_w"] = ds.image_w;
        d["proprio_dim"] = ds.proprio_dim;
        d["action_dim"] = ds.action_dim;
        d["episodes"] = ds.episodes.size();
        d["steps"] = ds.total_steps();
        return d;
    });
    m.def("train", [](const std::string& config_text, const std::string& data_path,
                      const std::string& out_dir) {
        RunConfig cfg = parse_run_config_text(config_text);
        Dataset ds = read_dataset(data_path);
        Model model(cfg.model, cfg.train.seed);
        TrainResult r = train(model, ds, cfg.train, out_dir);
        py::dict d;
        d["steps"] = r.steps_run;
        d["final_loss"] = r.final_loss;
        d["checkpoints"] = r.checkpoint_paths;
        return d;
    });
    m.def(
        "evaluate",
        [](const std::string& config_text, const std::string& ckpt_path, int64_t episodes,
           uint64_t seed, int64_t final_layer, bool expert) {
            RunConfig cfg = parse_run_config_text(config_text);
            const auto tasks = default_tasks(cfg.model.num_tasks);
            if (expert)
                return report_dict(evaluate_expert(cfg.env_config(), tasks, episodes, seed));
            LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
            require_same_architecture(cfg.model, loaded.config);
            return report_dict(evaluate(*loaded.model, cfg.env_config(), tasks, episodes, seed,
                                        final_layer, 1, &cfg.train));
        },
        py::arg("config_text"), py::arg("ckpt_path") = std::string(), py::arg("episodes") = 20,
        py::arg("seed") = 7, py::arg("final_layer") = 0, py::arg("expert") = false);
    m.def(
        "grad_check",
        [](const std::string& config_text, double eps) {
            RunConfig cfg = parse_run_config_text(config_text);
            Model model(cfg.model, cfg.train.seed);
            return model_grad_check(model, cfg.train, eps, Rng::mix(cfg.train.seed, 0xDA7AULL, 0))
                .max_rel_error;
        },
        py::arg("config_text"), py::arg("eps") = 3e-4);

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<FormatError>(m, "FormatError");
    py::register_exception<ContractError>(m, "ContractError");
}
