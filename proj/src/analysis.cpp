#include "vat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vat {

Tensor patch_heatmap(const ForwardRecord& record, const HeatmapSpec& spec) {
    if (spec.layer < 0 || spec.layer >= static_cast<int64_t>(record.cross_scores.size()))
        throw IndexError("heatmap layer " + std::to_string(spec.layer) +
                         " out of range (record holds " +
                         std::to_string(record.cross_scores.size()) + " layers)");
    if (spec.view_index < 0 || spec.view_index >= record.num_views)
        throw IndexError("heatmap view " + std::to_string(spec.view_index) + " out of range");
    const Tensor& scores = record.cross_scores[static_cast<size_t>(spec.layer)];
    const int64_t heads = scores.dim(0), nq = scores.dim(1), nk = scores.dim(2);
    const int64_t npv = record.patch_tokens_per_view;
    const int64_t q0 = record.query_action_begin;
    const int64_t q1 = q0 + record.num_action_queries;
    const int64_t k0 = record.key_vision_begin + spec.view_index * npv;
    if (q1 > nq || k0 + npv > nk)
        throw DimensionError("record layout inconsistent with score tensor " +
                             shape_str(scores.shape()));
    Tensor map = Tensor::zeros({record.patch_rows, record.patch_cols});
    const double inv = 1.0 / static_cast<double>(heads * (q1 - q0));
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t q = q0; q < q1; ++q) {
            const double* row = scores.data() + (h * nq + q) * nk;
            for (int64_t p = 0; p < npv; ++p) map.data()[p] += row[k0 + p] * inv;
        }
    return map;
}

namespace {

// Catmull-Rom kernel, a = -0.5.
double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return a * (((t - 5.0) * t + 8.0) * t - 4.0);
    return 0.0;
}

// 1-D bicubic resample of every row: [n, in_w] -> [n, out_w], edge-clamped.
std::vector<double> resample_rows(const std::vector<double>& src, int64_t n, int64_t in_w,
                                  int64_t out_w) {
    std::vector<double> dst(static_cast<size_t>(n * out_w));
    const double scale = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (int64_t j = 0; j < out_w; ++j) {
        const double s = (static_cast<double>(j) + 0.5) * scale - 0.5;
        const int64_t base = static_cast<int64_t>(std::floor(s));
        const double frac = s - static_cast<double>(base);
        double w[4];
        double wsum = 0.0;
        for (int64_t i = 0; i < 4; ++i) {
            w[i] = cubic_weight(static_cast<double>(i - 1) - frac);
            wsum += w[i];
        }
        // The Catmull-Rom taps sum to 1 analytically; renormalizing removes
        // the last-ulp drift so constant fields stay exactly constant.
        for (double& wi : w) wi /= wsum;
        for (int64_t r = 0; r < n; ++r) {
            const double* row = src.data() + r * in_w;
            double acc = 0.0;
            for (int64_t i = 0; i < 4; ++i) {
                const int64_t c = std::clamp<int64_t>(base + i - 1, 0, in_w - 1);
                acc += w[i] * row[c];
            }
            dst[static_cast<size_t>(r * out_w + j)] = acc;
        }
    }
    return dst;
}

std::vector<double> transpose_vec(const std::vector<double>& src, int64_t rows, int64_t cols) {
    std::vector<double> dst(src.size());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            dst[static_cast<size_t>(c * rows + r)] = src[static_cast<size_t>(r * cols + c)];
    return dst;
}

}  // namespace

Tensor upsample_bicubic(const Tensor& map, int64_t out_h, int64_t out_w) {
    if (map.ndim() != 2) throw DimensionError("upsample expects a 2-D map");
    const int64_t in_h = map.dim(0), in_w = map.dim(1);
    if (out_h < in_h || out_w < in_w)
        throw ContractError("upsample target must be at least the input size");
    std::vector<double> horiz = resample_rows(map.values(), in_h, in_w, out_w);
    std::vector<double> cols = transpose_vec(horiz, in_h, out_w);
    std::vector<double> vert = resample_rows(cols, out_w, in_h, out_h);
    return Tensor::from_data({out_h, out_w}, transpose_vec(vert, out_w, out_h));
}

Tensor minmax_normalize(const Tensor& map) {
    double lo = map.data()[0], hi = map.data()[0];
    for (int64_t i = 0; i < map.numel(); ++i) {
        lo = std::min(lo, map.data()[i]);
        hi = std::max(hi, map.data()[i]);
    }
    Tensor out = Tensor::zeros(map.shape());
    const double range = hi - lo;
    // Maps that are constant up to floating-point noise stay all-zero
    // instead of having that noise stretched across [0,1].
    if (range > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi))))
        for (int64_t i = 0; i < map.numel(); ++i) out.data()[i] = (map.data()[i] - lo) / range;
    return out;
}

Tensor overlay(const Tensor& image, const Tensor& map, double alpha) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError("overlay expects a [3,H,W] image, got " + shape_str(image.shape()));
    if (map.ndim() != 2 || map.dim(0) != image.dim(1) || map.dim(1) != image.dim(2))
        throw DimensionError("overlay map " + shape_str(map.shape()) +
                             " does not match image " + shape_str(image.shape()));
    const int64_t plane = image.dim(1) * image.dim(2);
    Tensor out = Tensor::zeros(image.shape());
    for (int64_t p = 0; p < plane; ++p) {
        const double m = std::clamp(map.data()[p], 0.0, 1.0);
        const int idx = std::clamp(static_cast<int>(m * 255.0 + 0.5), 0, 255);
        for (int64_t c = 0; c < 3; ++c) {
            const double v =
                (1.0 - alpha) * image.data()[c * plane + p] + alpha * kColormap[idx][c];
            out.data()[c * plane + p] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

void export_ppm(const Tensor& image, const std::string& path) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError("export_ppm expects a [3,H,W] image");
    const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(3 * plane));
    for (int64_t p = 0; p < plane; ++p)
        for (int64_t c = 0; c < 3; ++c) {
            const double v = std::clamp(image.data()[c * plane + p], 0.0, 1.0);
            out.push_back(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
        }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("failed writing '" + path + "'");
}

std::vector<SweepRow> layer_sweep(const Model& model, const Dataset& ds,
                                  const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                                  const std::vector<int64_t>& layers, const SweepOptions& opt) {
    std::vector<SweepRow> rows;
    for (int64_t cutoff : layers) {
        if (cutoff < 1 || cutoff > model.config().num_layers)
            throw ConfigError("sweep layer " + std::to_string(cutoff) +
                              " outside [1, num_layers]");
        EvalReport report;
        if (cutoff == model.config().num_layers) {
            report = evaluate(model, env_cfg, tasks, opt.episodes_per_task, opt.eval_seed);
        } else {
            Model tuned(model.config(), opt.finetune_seed);
            tuned.copy_parameters_from(model);
            finetune_head(tuned, ds, cutoff, opt.finetune_steps, opt.finetune_lr,
                          opt.finetune_seed, opt.batch_size);
            report = evaluate(tuned, env_cfg, tasks, opt.episodes_per_task, opt.eval_seed, cutoff);
        }
        rows.push_back({cutoff, report.mean_rate,
                        opt.episodes_per_task * static_cast<int64_t>(tasks.size())});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string s = "layer,success_rate,episodes\n";
    for (const auto& r : rows) {
        char line[80];
        std::snprintf(line, sizeof(line), "%lld,%.4f,%lld\n", static_cast<long long>(r.layer),
                      r.success_rate, static_cast<long long>(r.episodes));
        s += line;
    }
    return s;
}

}  // namespace vat
