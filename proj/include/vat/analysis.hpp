#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vat/model.hpp"
#include "vat/train.hpp"

namespace vat {

// 256-entry viridis table used by overlay(); embedded for reproducibility.
extern const double kColormap[256][3];

struct HeatmapSpec {
    int64_t layer = 0;       // record index, 0-based, < record.final_layer
    int64_t view_index = 0;  // which view's patch grid to extract
};

// Average of the layer's cross-attention scores over all heads and all
// action-token query rows, restricted to key columns of the chosen view's
// patch tokens (extras and other views excluded), reshaped to the view's
// patch grid. No normalization is applied here.
Tensor patch_heatmap(const ForwardRecord& record, const HeatmapSpec& spec);

// Catmull-Rom bicubic upsampling (a = -0.5), edge-clamped, half-pixel
// centers. Reproduces constant and linear fields in the interior.
Tensor upsample_bicubic(const Tensor& map, int64_t out_h, int64_t out_w);

// Min-max normalization to [0,1]; a constant map becomes all zeros.
Tensor minmax_normalize(const Tensor& map);

// out = (1-alpha) * image + alpha * colormap(map), clipped to [0,1].
// map must be normalized to [0,1] and match the image's H x W.
Tensor overlay(const Tensor& image, const Tensor& map, double alpha = 0.5);

// Binary P6 PPM, maxval 255, values rounded half-up.
void export_ppm(const Tensor& image, const std::string& path);

struct SweepRow {
    int64_t layer = 0;  // final-layer cutoff (1-based count)
    double success_rate = 0.0;
    int64_t episodes = 0;
};

struct SweepOptions {
    int64_t episodes_per_task = 25;
    uint64_t eval_seed = 7;
    int64_t finetune_steps = 400;  // decoder-head fine-tune budget per cutoff
    double finetune_lr = 1e-3;
    uint64_t finetune_seed = 11;
    int64_t batch_size = 16;
};

// For each cutoff in `layers`: evaluates the model truncated at that layer.
// Cutoffs below num_layers first fine-tune a cloned model's decoder head
// (all other parameters frozen) on the dataset with the truncated forward
// pass; the full-depth cutoff evaluates the model as-is, so sweeping
// [num_layers] alone reproduces a plain evaluation.
std::vector<SweepRow> layer_sweep(const Model& model, const Dataset& ds,
                                  const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                                  const std::vector<int64_t>& layers, const SweepOptions& opt);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace vat
