#include "vat/model.hpp"

#include <cmath>

#include "vat/rng.hpp"

namespace vat {

std::string to_string(Conditioning c) {
    switch (c) {
        case Conditioning::kFilm: return "film";
        case Conditioning::kTaskEmbedding: return "task_embedding";
        case Conditioning::kNone: return "none";
    }
    return "?";
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::kFull: return "full";
        case Variant::kSmall: return "small";
        case Variant::kVitShared: return "vit_shared";
    }
    return "?";
}

Conditioning conditioning_from_string(const std::string& s) {
    if (s == "film") return Conditioning::kFilm;
    if (s == "task_embedding") return Conditioning::kTaskEmbedding;
    if (s == "none") return Conditioning::kNone;
    throw ConfigError("unknown conditioning '" + s + "' (expected film|task_embedding|none)");
}

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::kFull;
    if (s == "small") return Variant::kSmall;
    if (s == "vit_shared") return Variant::kVitShared;
    throw ConfigError("unknown variant '" + s + "' (expected full|small|vit_shared)");
}

int64_t ModelConfig::resolved_d_action() const {
    if (d_action > 0) return d_action;
    return variant == Variant::kSmall ? d_vision / 4 : d_vision;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(num_layers >= 1, "num_layers must be >= 1");
    require(d_vision >= 1, "d_vision must be >= 1");
    require(num_heads >= 1, "num_heads must be >= 1");
    require(mlp_ratio >= 1, "mlp_ratio must be >= 1");
    require(patch_size >= 1, "patch_size must be >= 1");
    require(num_views >= 1, "num_views must be >= 1");
    require(chunk_size >= 1, "chunk_size must be >= 1");
    require(action_dim >= 1, "action_dim must be >= 1");
    require(tokens_per_action >= 1 && tokens_per_action <= action_dim,
            "tokens_per_action must lie in [1, action_dim]");
    require(num_tasks >= 1, "num_tasks must be >= 1");
    require(proprio_dim >= 0, "proprio_dim must be >= 0");
    require(d_vision % num_heads == 0, "d_vision must be divisible by num_heads");
    const int64_t da = resolved_d_action();
    require(da >= 1 && da % num_heads == 0, "d_action must be divisible by num_heads");
    require(image_h % patch_size == 0 && image_w % patch_size == 0,
            "image sides must be divisible by patch_size");
    const int64_t fl = resolved_final_layer();
    require(fl >= 1 && fl <= num_layers, "final_layer must lie in [1, num_layers]");
    if (variant == Variant::kSmall)
        require(d_vision % 4 == 0 && da == d_vision / 4,
                "small variant requires d_action == d_vision/4");
    if (variant == Variant::kVitShared) {
        require(da == d_vision, "vit_shared variant requires d_action == d_vision");
        require(conditioning == Conditioning::kTaskEmbedding,
                "vit_shared variant requires conditioning = task_embedding");
    }
}

std::string ModelConfig::to_text() const {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
    kv("num_layers", std::to_string(num_layers));
    kv("d_vision", std::to_string(d_vision));
    kv("d_action", std::to_string(d_action));
    kv("num_heads", std::to_string(num_heads));
    kv("mlp_ratio", std::to_string(mlp_ratio));
    kv("patch_size", std::to_string(patch_size));
    kv("image_h", std::to_string(image_h));
    kv("image_w", std::to_string(image_w));
    kv("num_views", std::to_string(num_views));
    kv("chunk_size", std::to_string(chunk_size));
    kv("action_dim", std::to_string(action_dim));
    kv("tokens_per_action", std::to_string(tokens_per_action));
    kv("num_tasks", std::to_string(num_tasks));
    kv("conditioning", to_string(conditioning));
    kv("variant", to_string(variant));
    kv("final_layer", std::to_string(final_layer));
    kv("proprio_dim", std::to_string(proprio_dim));
    kv("use_diffusion", use_diffusion ? "true" : "false");
    return s;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            const size_t b = s.find_first_not_of(ws);
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(ws) - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": missing '='");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto to_int = [&](const std::string& v) {
            try {
                size_t used = 0;
                long long x = std::stoll(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
                return static_cast<int64_t>(x);
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': invalid integer '" + v + "'");
            }
        };
        auto to_bool = [&](const std::string& v) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw ConfigError("config key '" + key + "': invalid boolean '" + v + "'");
        };
        if (key == "num_layers") cfg.num_layers = to_int(val);
        else if (key == "d_vision") cfg.d_vision = to_int(val);
        else if (key == "d_action") cfg.d_action = to_int(val);
        else if (key == "num_heads") cfg.num_heads = to_int(val);
        else if (key == "mlp_ratio") cfg.mlp_ratio = to_int(val);
        else if (key == "patch_size") cfg.patch_size = to_int(val);
        else if (key == "image_h") cfg.image_h = to_int(val);
        else if (key == "image_w") cfg.image_w = to_int(val);
        else if (key == "num_views") cfg.num_views = to_int(val);
        else if (key == "chunk_size") cfg.chunk_size = to_int(val);
        else if (key == "action_dim") cfg.action_dim = to_int(val);
        else if (key == "tokens_per_action") cfg.tokens_per_action = to_int(val);
        else if (key == "num_tasks") cfg.num_tasks = to_int(val);
        else if (key == "conditioning") cfg.conditioning = conditioning_from_string(val);
        else if (key == "variant") cfg.variant = variant_from_string(val);
        else if (key == "final_layer") cfg.final_layer = to_int(val);
        else if (key == "proprio_dim") cfg.proprio_dim = to_int(val);
        else if (key == "use_diffusion") cfg.use_diffusion = to_bool(val);
        else
            throw ConfigError("unknown model config key '" + key + "' at line " +
                              std::to_string(line_no));
    }
    return cfg;
}

namespace {

Tensor snapshot(const Tensor& t) { return Tensor::from_data(t.shape(), t.values()); }

Tensor to_heads(const Tensor& x, int64_t h, Tape* tape) {
    const int64_t n = x.dim(0), d = x.dim(1), dh = d / h;
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(h));
    for (int64_t i = 0; i < h; ++i) parts.push_back(slice_cols(x, i * dh, (i + 1) * dh, tape));
    return stack_flat(parts, {h, n, dh}, tape);
}

Tensor from_heads(const Tensor& x3, Tape* tape) {
    const int64_t h = x3.dim(0), n = x3.dim(1), dh = x3.dim(2);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(h));
    for (int64_t i = 0; i < h; ++i)
        parts.push_back(slice_flat(x3, i * n * dh, n * dh, {n, dh}, tape));
    return concat_cols(parts, tape);
}

}  // namespace

Tensor sinusoidal_timestep(int64_t t, int64_t dim) {
    Tensor out = Tensor::zeros({1, dim});
    for (int64_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out.data()[2 * i] = std::sin(static_cast<double>(t) * freq);
        out.data()[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return out;
}

int64_t param_count(const std::vector<ParamEntry>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

Tensor Model::register_param(const std::string& name, ParamGroup group, Shape shape,
                             double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (stddev > 0.0) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = init_rng_->normal(0.0, stddev);
    }
    t.set_requires_grad(true);
    params_.push_back({name, group, t});
    return t;
}

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    init_rng_ = &rng;
    const int64_t dv = cfg_.d_vision;
    const int64_t da = cfg_.resolved_d_action();
    const bool shared = cfg_.variant == Variant::kVitShared;
    const int64_t d_tok = shared ? dv : da;  // width of the action-token stream
    const double std0 = 0.02;

    patch_w_ = register_param("patch.proj.w", ParamGroup::kVision,
                              {cfg_.patch_size * cfg_.patch_size * 3, dv}, std0);
    patch_b_ = register_param("patch.proj.b", ParamGroup::kVision, {dv}, 0.0);
    pos_row_ = register_param("patch.pos_row", ParamGroup::kVision, {cfg_.patch_rows(), dv}, std0);
    pos_col_ = register_param("patch.pos_col", ParamGroup::kVision, {cfg_.patch_cols(), dv}, std0);
    view_emb_ = register_param("patch.view_emb", ParamGroup::kVision, {cfg_.num_views, dv}, std0);

    action_pos_ = register_param("action.pos", ParamGroup::kAction,
                                 {cfg_.action_tokens(), d_tok}, std0);
    if (cfg_.conditioning != Conditioning::kNone)
        task_table_ = register_param("cond.task_table", ParamGroup::kAction,
                                     {cfg_.num_tasks, d_tok}, std0);
    if (cfg_.proprio_dim > 0) {
        proprio_w_ = register_param("extras.proprio.w", ParamGroup::kAction,
                                    {cfg_.proprio_dim, d_tok}, std0);
        proprio_b_ = register_param("extras.proprio.b", ParamGroup::kAction, {d_tok}, 0.0);
    }
    if (cfg_.use_diffusion) {
        timestep_w_ = register_param("extras.timestep.w", ParamGroup::kAction, {32, d_tok}, std0);
        timestep_b_ = register_param("extras.timestep.b", ParamGroup::kAction, {d_tok}, 0.0);
        noise_w_ = register_param("extras.noise.w", ParamGroup::kAction,
                                  {cfg_.action_dim, d_tok}, std0);
        noise_b_ = register_param("extras.noise.b", ParamGroup::kAction, {d_tok}, 0.0);
    }

    const bool extras_proj = !shared && cfg_.num_extra_tokens() > 0;
    for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        const std::string vp = "vision." + std::to_string(l) + ".";
        VisionLayerParams v;
        v.ln1.gain = register_param(vp + "ln1.g", ParamGroup::kVision, {dv}, 0.0);
        v.ln1.gain.values().assign(static_cast<size_t>(dv), 1.0);
        v.ln1.bias = register_param(vp + "ln1.b", ParamGroup::kVision, {dv}, 0.0);
        v.attn.wq = register_param(vp + "attn.wq", ParamGroup::kVision, {dv, dv}, std0);
        v.attn.bq = register_param(vp + "attn.bq", ParamGroup::kVision, {dv}, 0.0);
        v.attn.wk = register_param(vp + "attn.wk", ParamGroup::kVision, {dv, dv}, std0);
        v.attn.bk = register_param(vp + "attn.bk", ParamGroup::kVision, {dv}, 0.0);
        v.attn.wv = register_param(vp + "attn.wv", ParamGroup::kVision, {dv, dv}, std0);
        v.attn.bv = register_param(vp + "attn.bv", ParamGroup::kVision, {dv}, 0.0);
        v.attn.wo = register_param(vp + "attn.wo", ParamGroup::kVision, {dv, dv}, 0.0);
        v.attn.bo = register_param(vp + "attn.bo", ParamGroup::kVision, {dv}, 0.0);
        v.ln2.gain = register_param(vp + "ln2.g", ParamGroup::kVision, {dv}, 0.0);
        v.ln2.gain.values().assign(static_cast<size_t>(dv), 1.0);
        v.ln2.bias = register_param(vp + "ln2.b", ParamGroup::kVision, {dv}, 0.0);
        v.mlp.w1 = register_param(vp + "mlp.w1", ParamGroup::kVision, {dv, cfg_.mlp_ratio * dv}, std0);
        v.mlp.b1 = register_param(vp + "mlp.b1", ParamGroup::kVision, {cfg_.mlp_ratio * dv}, 0.0);
        v.mlp.w2 = register_param(vp + "mlp.w2", ParamGroup::kVision, {cfg_.mlp_ratio * dv, dv}, 0.0);
        v.mlp.b2 = register_param(vp + "mlp.b2", ParamGroup::kVision, {dv}, 0.0);
        vision_layers_.push_back(std::move(v));

        if (shared) continue;
        const std::string ap = "action." + std::to_string(l) + ".";
        ActionLayerParams a;
        if (cfg_.conditioning == Conditioning::kFilm) {
            a.film_w = register_param(ap + "film.w", ParamGroup::kAction, {da, 2 * da}, 0.0);
            a.film_b = register_param(ap + "film.b", ParamGroup::kAction, {2 * da}, 0.0);
        }
        a.ln3.gain = register_param(ap + "ln3.g", ParamGroup::kAction, {da}, 0.0);
        a.ln3.gain.values().assign(static_cast<size_t>(da), 1.0);
        a.ln3.bias = register_param(ap + "ln3.b", ParamGroup::kAction, {da}, 0.0);
        a.attn.wq = register_param(ap + "attn.wq", ParamGroup::kAction, {da, da}, std0);
        a.attn.bq = register_param(ap + "attn.bq", ParamGroup::kAction, {da}, 0.0);
        a.attn.wk = register_param(ap + "attn.wk", ParamGroup::kAction, {dv, da}, std0);
        a.attn.bk = register_param(ap + "attn.bk", ParamGroup::kAction, {da}, 0.0);
        a.attn.wv = register_param(ap + "attn.wv", ParamGroup::kAction, {dv, da}, std0);
        a.attn.bv = register_param(ap + "attn.bv", ParamGroup::kAction, {da}, 0.0);
        a.attn.wo = register_param(ap + "attn.wo", ParamGroup::kAction, {da, da}, 0.0);
        a.attn.bo = register_param(ap + "attn.bo", ParamGroup::kAction, {da}, 0.0);
        if (extras_proj) {
            a.attn.wk_e = register_param(ap + "attn.wk_e", ParamGroup::kAction, {da, da}, std0);
            a.attn.bk_e = register_param(ap + "attn.bk_e", ParamGroup::kAction, {da}, 0.0);
            a.attn.wv_e = register_param(ap + "attn.wv_e", ParamGroup::kAction, {da, da}, std0);
            a.attn.bv_e = register_param(ap + "attn.bv_e", ParamGroup::kAction, {da}, 0.0);
        }
        a.ln4.gain = register_param(ap + "ln4.g", ParamGroup::kAction, {da}, 0.0);
        a.ln4.gain.values().assign(static_cast<size_t>(da), 1.0);
        a.ln4.bias = register_param(ap + "ln4.b", ParamGroup::kAction, {da}, 0.0);
        a.mlp.w1 = register_param(ap + "mlp.w1", ParamGroup::kAction, {da, cfg_.mlp_ratio * da}, std0);
        a.mlp.b1 = register_param(ap + "mlp.b1", ParamGroup::kAction, {cfg_.mlp_ratio * da}, 0.0);
        a.mlp.w2 = register_param(ap + "mlp.w2", ParamGroup::kAction, {cfg_.mlp_ratio * da, da}, 0.0);
        a.mlp.b2 = register_param(ap + "mlp.b2", ParamGroup::kAction, {da}, 0.0);
        action_layers_.push_back(std::move(a));
    }

    const bool per_token = cfg_.tokens_per_action == cfg_.action_dim;
    const int64_t head_in = per_token ? d_tok : cfg_.tokens_per_action * d_tok;
    const int64_t head_out = per_token ? 1 : cfg_.action_dim;
    head_ln_.gain = register_param("head.ln.g", ParamGroup::kAction, {d_tok}, 0.0);
    head_ln_.gain.values().assign(static_cast<size_t>(d_tok), 1.0);
    head_ln_.bias = register_param("head.ln.b", ParamGroup::kAction, {d_tok}, 0.0);
    head_w1_ = register_param("head.w1", ParamGroup::kAction, {head_in, d_tok}, std0);
    head_b1_ = register_param("head.b1", ParamGroup::kAction, {d_tok}, 0.0);
    head_w2_ = register_param("head.w2", ParamGroup::kAction, {d_tok, head_out}, std0);
    head_b2_ = register_param("head.b2", ParamGroup::kAction, {head_out}, 0.0);

    init_rng_ = nullptr;
}

int64_t Model::param_count() const { return vat::param_count(params_); }

void Model::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Model::copy_parameters_from(const Model& other) {
    if (other.params_.size() != params_.size())
        throw ConfigError("parameter registries differ in size");
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name ||
            params_[i].tensor.numel() != other.params_[i].tensor.numel())
            throw ConfigError("parameter registry mismatch at '" + params_[i].name + "'");
        params_[i].tensor.values() = other.params_[i].tensor.values();
    }
}

Tensor Model::patch_embed(const Tensor& image, int64_t view_index, Tape* tape) const {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError("patch_embed expects a [3,H,W] image, got " + shape_str(image.shape()));
    const int64_t h = image.dim(1), w = image.dim(2), p = cfg_.patch_size;
    if (h % p != 0 || w % p != 0)
        throw DimensionError("image " + shape_str(image.shape()) +
                             " not divisible by patch size " + std::to_string(p));
    if (h != cfg_.image_h || w != cfg_.image_w)
        throw DimensionError("image " + shape_str(image.shape()) + " does not match configured " +
                             std::to_string(cfg_.image_h) + "x" + std::to_string(cfg_.image_w));
    if (view_index < 0 || view_index >= cfg_.num_views)
        throw IndexError("view index " + std::to_string(view_index) + " out of range");
    const int64_t hp = h / p, wp = w / p;
    // Patch matrix rows ordered row-major over the grid; within a patch the
    // layout is (channel, py, px).
    Tensor patches = Tensor::zeros({hp * wp, p * p * 3});
    const double* img = image.data();
    for (int64_t r = 0; r < hp; ++r)
        for (int64_t c = 0; c < wp; ++c) {
            double* row = patches.data() + (r * wp + c) * p * p * 3;
            int64_t o = 0;
            for (int64_t ch = 0; ch < 3; ++ch)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        row[o++] = img[ch * h * w + (r * p + py) * w + (c * p + px)];
        }
    Tensor tokens = linear(patches, patch_w_, patch_b_, tape);
    tokens = add(tokens, grid_pos_embed(pos_row_, pos_col_, tape), tape);
    tokens = add_row(tokens, select_row(view_emb_, view_index, tape), tape);
    return tokens;
}

Tensor Model::build_action_tokens(const Tensor& noisy_chunk, Tape* tape) const {
    if (!noisy_chunk.defined()) return action_pos_;
    if (!cfg_.use_diffusion)
        throw ContractError("noisy chunk provided but use_diffusion is off");
    if (noisy_chunk.ndim() != 2 || noisy_chunk.dim(0) != cfg_.chunk_size ||
        noisy_chunk.dim(1) != cfg_.action_dim)
        throw DimensionError("noisy chunk must be [K,L], got " + shape_str(noisy_chunk.shape()));
    Tensor enc = linear(noisy_chunk, noise_w_, noise_b_, tape);  // [K, d]
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(cfg_.action_tokens()));
    for (int64_t k = 0; k < cfg_.chunk_size; ++k) {
        Tensor row = slice_rows(enc, k, k + 1, tape);
        for (int64_t t = 0; t < cfg_.tokens_per_action; ++t) rows.push_back(row);
    }
    return add(action_pos_, concat_rows(rows, tape), tape);
}

Tensor Model::make_timestep_token(int64_t timestep, Tape* tape) const {
    if (!cfg_.use_diffusion) throw ContractError("timestep token requires use_diffusion");
    if (timestep < 0) throw ContractError("timestep must be non-negative");
    return linear(sinusoidal_timestep(timestep), timestep_w_, timestep_b_, tape);
}

Tensor Model::make_proprio_token(const Tensor& proprio, Tape* tape) const {
    if (cfg_.proprio_dim <= 0) throw ContractError("proprio token requires proprio_dim > 0");
    if (proprio.numel() != cfg_.proprio_dim)
        throw DimensionError("proprio length " + std::to_string(proprio.numel()) +
                             " does not match proprio_dim " + std::to_string(cfg_.proprio_dim));
    Tensor row = Tensor::from_data({1, cfg_.proprio_dim}, proprio.values());
    return linear(row, proprio_w_, proprio_b_, tape);
}

Tensor Model::mha(const Tensor& q_in, const Tensor& kv_vision, const Tensor& kv_extras,
                  const AttentionParams& p, int64_t heads, Tape* tape, Tensor* scores_out) const {
    Tensor q = linear(q_in, p.wq, p.bq, tape);
    Tensor k = linear(kv_vision, p.wk, p.bk, tape);
    Tensor v = linear(kv_vision, p.wv, p.bv, tape);
    if (kv_extras.defined()) {
        if (!p.wk_e.defined())
            throw DimensionError("extra tokens present but attention has no extra-token "
                                 "key/value projections");
        k = concat_rows({k, linear(kv_extras, p.wk_e, p.bk_e, tape)}, tape);
        v = concat_rows({v, linear(kv_extras, p.wv_e, p.bv_e, tape)}, tape);
    }
    auto [out3, scores] =
        scaled_dot_attention(to_heads(q, heads, tape), to_heads(k, heads, tape),
                             to_heads(v, heads, tape), tape);
    if (scores_out) *scores_out = scores;
    return linear(from_heads(out3, tape), p.wo, p.bo, tape);
}

Tensor Model::mlp_block(const Tensor& x, const MlpParams& p, Tape* tape) const {
    return linear(gelu(linear(x, p.w1, p.b1, tape), tape), p.w2, p.b2, tape);
}

Tensor Model::vision_layer(const Tensor& x, int64_t layer, Tape* tape, Tensor* scores_out) const {
    if (layer < 0 || layer >= cfg_.num_layers)
        throw IndexError("vision layer " + std::to_string(layer) + " out of range");
    const VisionLayerParams& p = vision_layers_[static_cast<size_t>(layer)];
    Tensor n1 = layer_norm(x, p.ln1.gain, p.ln1.bias, 1e-6, tape);
    Tensor attn = mha(n1, n1, Tensor(), p.attn, cfg_.num_heads, tape, scores_out);
    Tensor x1 = add(x, attn, tape);
    Tensor n2 = layer_norm(x1, p.ln2.gain, p.ln2.bias, 1e-6, tape);
    return add(x1, mlp_block(n2, p.mlp, tape), tape);
}

Tensor Model::film(const Tensor& x_action, int64_t task_id, int64_t layer, Tape* tape) const {
    if (cfg_.conditioning != Conditioning::kFilm)
        throw ContractError("film() requires conditioning = film");
    if (layer < 0 || layer >= static_cast<int64_t>(action_layers_.size()))
        throw IndexError("action layer " + std::to_string(layer) + " out of range");
    const ActionLayerParams& p = action_layers_[static_cast<size_t>(layer)];
    const int64_t da = cfg_.resolved_d_action();
    Tensor t_embed = select_row(task_table_, task_id, tape);
    Tensor theta = linear(t_embed, p.film_w, p.film_b, tape);  // [1, 2*da]
    Tensor gamma = slice_cols(theta, 0, da, tape);
    Tensor beta = slice_cols(theta, da, 2 * da, tape);
    return add_row(mul_row(x_action, add_scalar(gamma, 1.0, tape), tape), beta, tape);
}

Tensor Model::apply_conditioning(const Tensor& x_action, int64_t task_id, int64_t layer,
                                 Tape* tape) const {
    switch (cfg_.conditioning) {
        case Conditioning::kFilm:
            return film(x_action, task_id, layer, tape);
        case Conditioning::kTaskEmbedding:
            // A single learned embedding added to the action tokens at input.
            if (layer == 0) return add_row(x_action, select_row(task_table_, task_id, tape), tape);
            return x_action;
        case Conditioning::kNone:
            return x_action;
    }
    return x_action;
}

Tensor Model::action_layer(const Tensor& x_action, const Tensor& x_vision_prev, Tensor& extras,
                           int64_t task_id, int64_t layer, Tape* tape, Tensor* scores_out) const {
    if (cfg_.variant == Variant::kVitShared)
        throw ContractError("vit_shared variant has no separate action layers");
    if (layer < 0 || layer >= cfg_.num_layers)
        throw IndexError("action layer " + std::to_string(layer) + " out of range");
    const ActionLayerParams& p = action_layers_[static_cast<size_t>(layer)];
    const VisionLayerParams& vp = vision_layers_[static_cast<size_t>(layer)];
    const int64_t na = x_action.dim(0);
    const int64_t ne = extras.defined() ? extras.dim(0) : 0;

    Tensor cond = apply_conditioning(x_action, task_id, layer, tape);
    Tensor q_in = ne > 0 ? concat_rows({cond, extras}, tape) : cond;
    Tensor q_norm = layer_norm(q_in, p.ln3.gain, p.ln3.bias, 1e-6, tape);
    // Keys/values: vision tokens normalized with the vision module's first
    // layer norm, extra tokens with the action-stream norm.
    Tensor kv_vision = layer_norm(x_vision_prev, vp.ln1.gain, vp.ln1.bias, 1e-6, tape);
    Tensor kv_extras = ne > 0 ? slice_rows(q_norm, na, na + ne, tape) : Tensor();
    Tensor attn = mha(q_norm, kv_vision, kv_extras, p.attn, cfg_.num_heads, tape, scores_out);
    Tensor x1 = add(q_in, attn, tape);
    Tensor n4 = layer_norm(x1, p.ln4.gain, p.ln4.bias, 1e-6, tape);
    Tensor out = add(x1, mlp_block(n4, p.mlp, tape), tape);
    if (ne > 0) {
        extras = slice_rows(out, na, na + ne, tape);
        return slice_rows(out, 0, na, tape);
    }
    return out;
}

Tensor Model::decode_actions(const Tensor& x_action_final, Tape* tape) const {
    const int64_t kt = cfg_.action_tokens();
    if (x_action_final.ndim() != 2 || x_action_final.dim(0) != kt)
        throw DimensionError("decoder expects " + std::to_string(kt) + " action tokens, got " +
                             shape_str(x_action_final.shape()));
    const int64_t k = cfg_.chunk_size, l = cfg_.action_dim, t = cfg_.tokens_per_action;
    const int64_t d = x_action_final.dim(1);
    // Final norm of the residual stream before the readout, as in a
    // standard pre-norm ViT.
    Tensor normed = layer_norm(x_action_final, head_ln_.gain, head_ln_.bias, 1e-6, tape);
    Tensor features;
    if (t == l) {
        features = normed;  // one scalar per token
    } else {
        std::vector<Tensor> steps;
        steps.reserve(static_cast<size_t>(k));
        for (int64_t i = 0; i < k; ++i)
            steps.push_back(slice_flat(normed, i * t * d, t * d, {1, t * d}, tape));
        features = concat_rows(steps, tape);
    }
    Tensor hidden = gelu(linear(features, head_w1_, head_b1_, tape), tape);
    Tensor y = linear(hidden, head_w2_, head_b2_, tape);
    return reshape(y, {k, l}, tape);
}

Tensor Model::forward(const ModelInput& in, Tape* tape, ForwardRecord* record,
                      int64_t final_layer_override) const {
    if (static_cast<int64_t>(in.views.size()) != cfg_.num_views)
        throw ContractError("expected " + std::to_string(cfg_.num_views) + " views, got " +
                            std::to_string(in.views.size()));
    if (cfg_.proprio_dim > 0 && !in.proprio.defined())
        throw ContractError("model is configured with a proprioception token but no proprio "
                            "input was given");
    if (cfg_.use_diffusion) {
        if (in.timestep < 0) throw ContractError("diffusion model requires a timestep input");
        if (!in.noisy_chunk.defined())
            throw ContractError("diffusion model requires a noisy action chunk input");
    } else if (in.timestep >= 0 || in.noisy_chunk.defined()) {
        throw ContractError("timestep/noisy chunk given but use_diffusion is off");
    }
    const int64_t fl =
        final_layer_override > 0 ? final_layer_override : cfg_.resolved_final_layer();
    if (fl < 1 || fl > cfg_.num_layers)
        throw ConfigError("final_layer must lie in [1, num_layers]");

    if (record) {
        *record = ForwardRecord{};
        record->patch_tokens_per_view = cfg_.patch_tokens_per_view();
        record->patch_rows = cfg_.patch_rows();
        record->patch_cols = cfg_.patch_cols();
        record->num_views = cfg_.num_views;
        record->final_layer = fl;
        record->num_action_queries = cfg_.action_tokens();
    }

    if (cfg_.variant == Variant::kVitShared) return forward_shared(in, tape, record, fl);

    std::vector<Tensor> view_tokens;
    view_tokens.reserve(in.views.size());
    for (size_t v = 0; v < in.views.size(); ++v)
        view_tokens.push_back(patch_embed(in.views[v], static_cast<int64_t>(v), tape));
    Tensor vision = cfg_.num_views == 1 ? view_tokens[0] : concat_rows(view_tokens, tape);

    Tensor action = build_action_tokens(in.noisy_chunk, tape);
    std::vector<Tensor> extra_list;
    if (cfg_.use_diffusion) extra_list.push_back(make_timestep_token(in.timestep, tape));
    if (cfg_.proprio_dim > 0) extra_list.push_back(make_proprio_token(in.proprio, tape));
    Tensor extras;
    if (extra_list.size() == 1) extras = extra_list[0];
    else if (extra_list.size() > 1) extras = concat_rows(extra_list, tape);

    for (int64_t l = 0; l < fl; ++l) {
        Tensor scores;
        action = action_layer(action, vision, extras, in.task_id, l, tape, &scores);
        vision = vision_layer(vision, l, tape);
        if (record) {
            record->cross_scores.push_back(snapshot(scores));
            record->action_tokens.push_back(snapshot(action));
            record->vision_tokens.push_back(snapshot(vision));
        }
    }
    return decode_actions(action, tape);
}

Tensor Model::forward_shared(const ModelInput& in, Tape* tape, ForwardRecord* record,
                             int64_t fl) const {
    std::vector<Tensor> view_tokens;
    for (size_t v = 0; v < in.views.size(); ++v)
        view_tokens.push_back(patch_embed(in.views[v], static_cast<int64_t>(v), tape));
    Tensor vision = cfg_.num_views == 1 ? view_tokens[0] : concat_rows(view_tokens, tape);
    const int64_t nv = vision.dim(0);
    const int64_t kt = cfg_.action_tokens();

    Tensor action = build_action_tokens(in.noisy_chunk, tape);
    action = add_row(action, select_row(task_table_, in.task_id, tape), tape);
    std::vector<Tensor> parts{vision, action};
    if (cfg_.use_diffusion) parts.push_back(make_timestep_token(in.timestep, tape));
    if (cfg_.proprio_dim > 0) parts.push_back(make_proprio_token(in.proprio, tape));
    Tensor joint = concat_rows(parts, tape);

    if (record) {
        record->key_vision_begin = 0;
        record->query_action_begin = nv;
    }
    for (int64_t l = 0; l < fl; ++l) {
        Tensor scores;
        joint = vision_layer(joint, l, tape, &scores);
        if (record) {
            record->cross_scores.push_back(snapshot(scores));
            record->vision_tokens.push_back(snapshot(slice_rows(joint, 0, nv)));
            record->action_tokens.push_back(snapshot(slice_rows(joint, nv, nv + kt)));
        }
    }
    return decode_actions(slice_rows(joint, nv, nv + kt, tape), tape);
}

std::vector<Tensor> Model::vision_only_trajectory(const std::vector<Tensor>& views,
                                                  int64_t final_layer) const {
    const int64_t fl = final_layer > 0 ? final_layer : cfg_.resolved_final_layer();
    if (fl < 1 || fl > cfg_.num_layers)
        throw ConfigError("final_layer must lie in [1, num_layers]");
    std::vector<Tensor> view_tokens;
    for (size_t v = 0; v < views.size(); ++v)
        view_tokens.push_back(patch_embed(views[v], static_cast<int64_t>(v)));
    Tensor vision = views.size() == 1 ? view_tokens[0] : concat_rows(view_tokens);
    std::vector<Tensor> states;
    for (int64_t l = 0; l < fl; ++l) {
        vision = vision_layer(vision, l);
        states.push_back(snapshot(vision));
    }
    return states;
}

}  // namespace vat
