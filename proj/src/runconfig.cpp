#include "vat/runconfig.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace vat {

namespace {

std::string trim(const std::string& s) {
    const char* ws = " \t\r";
    const size_t b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return static_cast<int64_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': invalid integer '" + v + "'");
    }
}

double parse_float(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': invalid number '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': invalid boolean '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (env_max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (episodes_per_task < 0) throw ConfigError("episodes_per_task must be >= 0");
}

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> schema = {
        {"num_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_layers = parse_int(k, v); }},
        {"d_vision", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d_vision = parse_int(k, v); }},
        {"d_action", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d_action = parse_int(k, v); }},
        {"num_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_heads = parse_int(k, v); }},
        {"mlp_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mlp_ratio = parse_int(k, v); }},
        {"patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch_size = parse_int(k, v); }},
        {"image_h", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_h = parse_int(k, v); }},
        {"image_w", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_w = parse_int(k, v); }},
        {"num_views", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_views = parse_int(k, v); }},
        {"chunk_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.chunk_size = parse_int(k, v); }},
        {"action_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.action_dim = parse_int(k, v); }},
        {"tokens_per_action", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.tokens_per_action = parse_int(k, v); }},
        {"num_tasks", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_tasks = parse_int(k, v); }},
        {"conditioning", [](RunConfig& c, const std::string&, const std::string& v) { c.model.conditioning = conditioning_from_string(v); }},
        {"variant", [](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = variant_from_string(v); }},
        {"final_layer", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.final_layer = parse_int(k, v); }},
        {"proprio_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.proprio_dim = parse_int(k, v); }},
        {"use_diffusion", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_diffusion = parse_bool(k, v); }},
        {"lr0", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr0 = parse_float(k, v); }},
        {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_int(k, v); }},
        {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_int(k, v); }},
        {"checkpoint_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.checkpoint_every = parse_int(k, v); }},
        {"loss", [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss = loss_from_string(v); }},
        {"freeze_vision", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.freeze_vision = parse_bool(k, v); }},
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int(k, v)); }},
        {"diffusion_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.diffusion_steps = parse_int(k, v); }},
        {"beta_start", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta_start = parse_float(k, v); }},
        {"beta_end", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta_end = parse_float(k, v); }},
        {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_float(k, v); }},
        {"train_max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.max_steps = parse_int(k, v); }},
        {"stop_loss", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.stop_loss = parse_float(k, v); }},
        {"max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.env_max_steps = parse_int(k, v); }},
        {"episodes_per_task", [](RunConfig& c, const std::string& k, const std::string& v) { c.episodes_per_task = parse_int(k, v); }},
    };

    size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto it = schema.find(key);
        if (it == schema.end())
            throw ConfigError("unknown config key '" + key + "' at line " +
                              std::to_string(line_no));
        it->second(cfg, key, val);
        if (end == text.size()) break;
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return parse_run_config_text(text);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace vat
