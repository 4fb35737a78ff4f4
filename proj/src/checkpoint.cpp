#include "vat/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vat/train.hpp"

namespace vat {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::string buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("truncated checkpoint while reading ") + what,
                              static_cast<long long>(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
        pos += 8;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    void f32_into(std::vector<double>& out, size_t n, const char* what) {
        need(n * sizeof(float), what);
        out.resize(n);
        const float* src = reinterpret_cast<const float*>(buf.data() + pos);
        for (size_t i = 0; i < n; ++i) out[i] = static_cast<double>(src[i]);
        pos += n * sizeof(float);
    }
};

void append_f32_quantizing(std::string& out, std::vector<double>& values) {
    for (double& v : values) {
        const float f = static_cast<float>(v);
        v = static_cast<double>(f);  // quantize the live copy too
        char b[sizeof(float)];
        std::memcpy(b, &f, sizeof(float));
        out.append(b, sizeof(float));
    }
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, AdamOptimizer* optimizer) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string cfg_text = model.config().to_text();
    put_u32(out, static_cast<uint32_t>(cfg_text.size()));
    out += cfg_text;
    put_u64(out, static_cast<uint64_t>(model.param_count()));
    for (auto& p : model.parameters()) append_f32_quantizing(out, p.tensor.values());
    out.push_back(optimizer ? 1 : 0);
    if (optimizer) {
        put_u64(out, static_cast<uint64_t>(optimizer->step_count()));
        for (size_t i = 0; i < model.parameters().size(); ++i)
            append_f32_quantizing(out, optimizer->moment1(i));
        for (size_t i = 0; i < model.parameters().size(); ++i)
            append_f32_quantizing(out, optimizer->moment2(i));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("failed writing '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint '" + path + "'");
    Reader r;
    r.buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    r.need(4, "magic");
    if (std::memcmp(r.buf.data(), kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic (expected VATC)", 0);
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const uint32_t cfg_len = r.u32("config length");
    r.need(cfg_len, "config text");
    const std::string cfg_text = r.buf.substr(r.pos, cfg_len);
    r.pos += cfg_len;

    LoadedCheckpoint loaded;
    loaded.config = ModelConfig::from_text(cfg_text);
    loaded.model = std::make_unique<Model>(loaded.config, 0);

    const uint64_t count = r.u64("parameter count");
    if (count != static_cast<uint64_t>(loaded.model->param_count()))
        throw FormatError("checkpoint parameter count " + std::to_string(count) +
                          " does not match the registry (" +
                          std::to_string(loaded.model->param_count()) + ")",
                          static_cast<long long>(r.pos - 8));
    for (auto& p : loaded.model->parameters()) {
        std::vector<double> vals;
        r.f32_into(vals, static_cast<size_t>(p.tensor.numel()), p.name.c_str());
        p.tensor.values() = std::move(vals);
    }
    loaded.has_moments = r.u8("moments flag") != 0;
    if (loaded.has_moments) {
        loaded.adam_step = static_cast<int64_t>(r.u64("adam step"));
        for (auto& p : loaded.model->parameters()) {
            std::vector<double> m;
            r.f32_into(m, static_cast<size_t>(p.tensor.numel()), "adam m");
            loaded.moment1.push_back(std::move(m));
        }
        for (auto& p : loaded.model->parameters()) {
            std::vector<double> v;
            r.f32_into(v, static_cast<size_t>(p.tensor.numel()), "adam v");
            loaded.moment2.push_back(std::move(v));
        }
    }
    if (r.pos != r.buf.size())
        throw FormatError("trailing bytes in checkpoint", static_cast<long long>(r.pos));
    return loaded;
}

void require_same_architecture(const ModelConfig& expected, const ModelConfig& actual) {
    auto differ = [](const std::string& key) {
        throw ConfigError("checkpoint config differs from the requested config at key '" + key +
                          "'");
    };
    if (expected.num_layers != actual.num_layers) differ("num_layers");
    if (expected.d_vision != actual.d_vision) differ("d_vision");
    if (expected.resolved_d_action() != actual.resolved_d_action()) differ("d_action");
    if (expected.num_heads != actual.num_heads) differ("num_heads");
    if (expected.mlp_ratio != actual.mlp_ratio) differ("mlp_ratio");
    if (expected.patch_size != actual.patch_size) differ("patch_size");
    if (expected.image_h != actual.image_h) differ("image_h");
    if (expected.image_w != actual.image_w) differ("image_w");
    if (expected.num_views != actual.num_views) differ("num_views");
    if (expected.chunk_size != actual.chunk_size) differ("chunk_size");
    if (expected.action_dim != actual.action_dim) differ("action_dim");
    if (expected.tokens_per_action != actual.tokens_per_action) differ("tokens_per_action");
    if (expected.num_tasks != actual.num_tasks) differ("num_tasks");
    if (expected.conditioning != actual.conditioning) differ("conditioning");
    if (expected.variant != actual.variant) differ("variant");
    if (expected.proprio_dim != actual.proprio_dim) differ("proprio_dim");
    if (expected.use_diffusion != actual.use_diffusion) differ("use_diffusion");
}

}  // namespace vat
