#include "vat/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vat/rng.hpp"

namespace vat {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'T', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

void put_f32(std::string& out, const float* data, size_t n) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("truncated dataset while reading ") + what,
                              static_cast<long long>(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
        pos += 4;
        return v;
    }
    void f32_block(std::vector<float>& out, size_t n, const char* what) {
        need(n * sizeof(float), what);
        const size_t old = out.size();
        out.resize(old + n);
        std::memcpy(out.data() + old, buf.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
    }
};

}  // namespace

int64_t Dataset::total_steps() const {
    int64_t n = 0;
    for (const auto& ep : episodes) n += ep.n_steps;
    return n;
}

int64_t dataset_file_size(const Dataset& ds) {
    const int64_t per_step = (6 * ds.image_h * ds.image_w + ds.proprio_dim + ds.action_dim) * 4;
    int64_t size = 28;  // magic + version + H,W,P,L,n_episodes
    for (const auto& ep : ds.episodes) size += 8 + ep.n_steps * per_step;
    return size;
}

void write_dataset(const Dataset& ds, const std::string& path) {
    std::string out;
    out.reserve(static_cast<size_t>(dataset_file_size(ds)));
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(ds.image_h));
    put_u32(out, static_cast<uint32_t>(ds.image_w));
    put_u32(out, static_cast<uint32_t>(ds.proprio_dim));
    put_u32(out, static_cast<uint32_t>(ds.action_dim));
    put_u32(out, static_cast<uint32_t>(ds.episodes.size()));
    const size_t frame = static_cast<size_t>(3 * ds.image_h * ds.image_w);
    for (const auto& ep : ds.episodes) {
        put_u32(out, static_cast<uint32_t>(ep.task_id));
        put_u32(out, static_cast<uint32_t>(ep.n_steps));
        for (int64_t t = 0; t < ep.n_steps; ++t) {
            put_f32(out, ep.view0.data() + static_cast<size_t>(t) * frame, frame);
            put_f32(out, ep.view1.data() + static_cast<size_t>(t) * frame, frame);
            put_f32(out, ep.proprio.data() + static_cast<size_t>(t * ds.proprio_dim),
                    static_cast<size_t>(ds.proprio_dim));
            put_f32(out, ep.action.data() + static_cast<size_t>(t * ds.action_dim),
                    static_cast<size_t>(ds.action_dim));
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("failed writing '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open dataset '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};

    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("bad dataset magic (expected VATD)", 0);
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version), 4);
    Dataset ds;
    ds.image_h = r.u32("image height");
    ds.image_w = r.u32("image width");
    ds.proprio_dim = r.u32("proprio dim");
    ds.action_dim = r.u32("action dim");
    const uint32_t n_episodes = r.u32("episode count");
    const size_t frame = static_cast<size_t>(3 * ds.image_h * ds.image_w);
    for (uint32_t e = 0; e < n_episodes; ++e) {
        Episode ep;
        ep.task_id = r.u32("task id");
        ep.n_steps = r.u32("step count");
        for (int64_t t = 0; t < ep.n_steps; ++t) {
            r.f32_block(ep.view0, frame, "view0");
            r.f32_block(ep.view1, frame, "view1");
            r.f32_block(ep.proprio, static_cast<size_t>(ds.proprio_dim), "proprio");
            r.f32_block(ep.action, static_cast<size_t>(ds.action_dim), "action");
        }
        ds.episodes.push_back(std::move(ep));
    }
    if (r.pos != buf.size())
        throw FormatError("trailing bytes after last episode", static_cast<long long>(r.pos));
    return ds;
}

void write_manifest(const Dataset& ds, const std::vector<TaskSpec>& tasks,
                    int64_t episodes_per_task, uint64_t seed, const std::string& path) {
    nlohmann::json j;
    j["format"] = "VATD";
    j["version"] = kVersion;
    j["image_h"] = ds.image_h;
    j["image_w"] = ds.image_w;
    j["proprio_dim"] = ds.proprio_dim;
    j["action_dim"] = ds.action_dim;
    j["n_episodes"] = ds.episodes.size();
    j["total_steps"] = ds.total_steps();
    j["episodes_per_task"] = episodes_per_task;
    j["seed"] = seed;
    j["tasks"] = nlohmann::json::array();
    for (const auto& t : tasks) {
        j["tasks"].push_back({{"task_id", t.task_id},
                              {"target", t.target == Target::kLeft ? "left" : "right"},
                              {"object_color_id", t.object_color_id}});
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << j.dump(2) << "\n";
}

namespace {

void append_tensor_f32(std::vector<float>& out, const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i) out.push_back(static_cast<float>(t.data()[i]));
}

}  // namespace

Dataset generate_demos(const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                       int64_t episodes_per_task, uint64_t seed) {
    PickPlaceEnv env(env_cfg);
    Dataset ds;
    ds.image_h = env_cfg.image_h;
    ds.image_w = env_cfg.image_w;
    ds.proprio_dim = 4;
    ds.action_dim = kEnvActionDim;
    for (const auto& task : tasks) {
        for (int64_t i = 0; i < episodes_per_task; ++i) {
            const uint64_t ep_seed =
                Rng::mix(seed, static_cast<uint64_t>(task.task_id), static_cast<uint64_t>(i));
            auto [state, obs] = env.reset(task, ep_seed);
            Episode ep;
            ep.task_id = task.task_id;
            bool success = false;
            while (true) {
                Tensor a = expert_action(state, task);
                append_tensor_f32(ep.view0, obs.view0);
                append_tensor_f32(ep.view1, obs.view1);
                append_tensor_f32(ep.proprio, obs.proprio);
                append_tensor_f32(ep.action, a);
                ++ep.n_steps;
                StepResult res = env.step(state, a, task);
                state = res.state;
                obs = res.obs;
                if (res.done) {
                    success = res.success;
                    break;
                }
            }
            if (!success)
                throw ContractError("expert rollout failed for task " +
                                    std::to_string(task.task_id) + ", episode " +
                                    std::to_string(i));
            ds.episodes.push_back(std::move(ep));
        }
    }
    return ds;
}

}  // namespace vat
