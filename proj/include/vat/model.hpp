#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vat/ops.hpp"
#include "vat/tensor.hpp"

namespace vat {

class Rng;

enum class Conditioning { kFilm, kTaskEmbedding, kNone };
enum class Variant { kFull, kSmall, kVitShared };

std::string to_string(Conditioning c);
std::string to_string(Variant v);
Conditioning conditioning_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

// Complete architectural hyperparameters. d_action == 0 derives the
// variant's default width (full/vit_shared: d_vision, small: d_vision/4);
// final_layer == 0 derives num_layers.
struct ModelConfig {
    int64_t num_layers = 4;
    int64_t d_vision = 64;
    int64_t d_action = 0;
    int64_t num_heads = 4;
    int64_t mlp_ratio = 4;
    int64_t patch_size = 8;
    int64_t image_h = 64;
    int64_t image_w = 64;
    int64_t num_views = 2;
    int64_t chunk_size = 8;        // K: actions per predicted chunk
    int64_t action_dim = 4;        // L: dimensions per action
    int64_t tokens_per_action = 4; // T: action tokens allocated per chunk step
    int64_t num_tasks = 4;
    Conditioning conditioning = Conditioning::kFilm;
    Variant variant = Variant::kFull;
    int64_t final_layer = 0;
    int64_t proprio_dim = 4;
    bool use_diffusion = false;

    int64_t resolved_d_action() const;
    int64_t resolved_final_layer() const { return final_layer == 0 ? num_layers : final_layer; }
    int64_t patch_rows() const { return image_h / patch_size; }
    int64_t patch_cols() const { return image_w / patch_size; }
    int64_t patch_tokens_per_view() const { return patch_rows() * patch_cols(); }
    int64_t vision_tokens() const { return patch_tokens_per_view() * num_views; }
    int64_t action_tokens() const { return chunk_size * tokens_per_action; }
    int64_t num_extra_tokens() const { return (use_diffusion ? 1 : 0) + (proprio_dim > 0 ? 1 : 0); }

    // Throws ConfigError on any violated invariant.
    void validate() const;

    // Canonical key = value serialization (architecture keys only).
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
    Tensor gain, bias;
};
struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor wk_e, bk_e, wv_e, bv_e;  // key/value maps for extra tokens (cross-attention only)
};
struct MlpParams {
    Tensor w1, b1, w2, b2;
};
struct VisionLayerParams {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    MlpParams mlp;
};
struct ActionLayerParams {
    Tensor film_w, film_b;  // task-embedding -> (gamma, beta), zero at init
    LayerNormParams ln3, ln4;
    AttentionParams attn;
    MlpParams mlp;
};

enum class ParamGroup { kVision, kAction };

struct ParamEntry {
    std::string name;
    ParamGroup group;
    Tensor tensor;
};

// Per-layer token states and cross-attention scores captured during one
// forward pass. Score tensors have shape [heads, queries, keys]; the
// layout fields locate action-token query rows and per-view patch key
// columns inside them.
struct ForwardRecord {
    std::vector<Tensor> vision_tokens;  // state after each layer, value snapshots
    std::vector<Tensor> action_tokens;
    std::vector<Tensor> cross_scores;
    int64_t patch_tokens_per_view = 0;
    int64_t patch_rows = 0;
    int64_t patch_cols = 0;
    int64_t num_views = 0;
    int64_t key_vision_begin = 0;     // first vision-key column
    int64_t query_action_begin = 0;   // first action-token query row
    int64_t num_action_queries = 0;
    int64_t final_layer = 0;
};

struct ModelInput {
    std::vector<Tensor> views;  // num_views tensors of shape [3,H,W], values in [0,1]
    int64_t task_id = 0;
    Tensor proprio;             // [P]; required when proprio_dim > 0
    int64_t timestep = -1;      // required when use_diffusion
    Tensor noisy_chunk;         // [K,L]; required when use_diffusion
};

// The policy network: a per-layer vision stream (ViT block) with a
// parallel action stream that cross-attends to the vision tokens entering
// the same layer. Variants: full (independent action module), small
// (quarter-width action module), vit_shared (action tokens ride through
// the vision module itself with shared weights).
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // --- per-stage operations (also the unit-test surface) ---

    Tensor patch_embed(const Tensor& image, int64_t view_index, Tape* tape = nullptr) const;
    Tensor build_action_tokens(const Tensor& noisy_chunk, Tape* tape = nullptr) const;
    Tensor vision_layer(const Tensor& x, int64_t layer, Tape* tape = nullptr,
                        Tensor* scores_out = nullptr) const;
    Tensor film(const Tensor& x_action, int64_t task_id, int64_t layer,
                Tape* tape = nullptr) const;
    Tensor apply_conditioning(const Tensor& x_action, int64_t task_id, int64_t layer,
                              Tape* tape = nullptr) const;
    // x_vision_prev is the vision state entering `layer`. extras may be an
    // undefined tensor; the updated extras row block is written back.
    Tensor action_layer(const Tensor& x_action, const Tensor& x_vision_prev, Tensor& extras,
                        int64_t task_id, int64_t layer, Tape* tape = nullptr,
                        Tensor* scores_out = nullptr) const;
    Tensor decode_actions(const Tensor& x_action_final, Tape* tape = nullptr) const;

    Tensor make_timestep_token(int64_t timestep, Tape* tape = nullptr) const;
    Tensor make_proprio_token(const Tensor& proprio, Tape* tape = nullptr) const;

    // --- whole-model forward ---

    // Returns the predicted action chunk [K,L]. final_layer_override == 0
    // uses the configured cutoff; otherwise the forward loop truncates at
    // the given layer count and decodes there.
    Tensor forward(const ModelInput& in, Tape* tape = nullptr, ForwardRecord* record = nullptr,
                   int64_t final_layer_override = 0) const;

    // Vision stream alone (no action tokens attached): per-layer states.
    std::vector<Tensor> vision_only_trajectory(const std::vector<Tensor>& views,
                                               int64_t final_layer = 0) const;

    // --- parameters ---

    const std::vector<ParamEntry>& parameters() const { return params_; }
    std::vector<ParamEntry>& parameters() { return params_; }
    int64_t param_count() const;
    void zero_grads();
    void copy_parameters_from(const Model& other);

private:
    Tensor mha(const Tensor& q_in, const Tensor& kv_vision, const Tensor& kv_extras,
               const AttentionParams& p, int64_t heads, Tape* tape, Tensor* scores_out) const;
    Tensor mlp_block(const Tensor& x, const MlpParams& p, Tape* tape) const;
    Tensor forward_shared(const ModelInput& in, Tape* tape, ForwardRecord* record,
                          int64_t final_layer) const;

    Tensor register_param(const std::string& name, ParamGroup group, Shape shape, double stddev);

    ModelConfig cfg_;
    Rng* init_rng_ = nullptr;  // only valid during construction

    Tensor patch_w_, patch_b_;
    Tensor pos_row_, pos_col_;
    Tensor view_emb_;
    Tensor action_pos_;
    Tensor task_table_;               // FiLM table or task-embedding table
    Tensor proprio_w_, proprio_b_;
    Tensor timestep_w_, timestep_b_;
    Tensor noise_w_, noise_b_;
    std::vector<VisionLayerParams> vision_layers_;
    std::vector<ActionLayerParams> action_layers_;  // empty for vit_shared
    LayerNormParams head_ln_;
    Tensor head_w1_, head_b1_, head_w2_, head_b2_;

    std::vector<ParamEntry> params_;
};

// Total scalar parameter count of a registry.
int64_t param_count(const std::vector<ParamEntry>& params);

// 32-dim sinusoidal embedding of an integer timestep (constant, untaped).
Tensor sinusoidal_timestep(int64_t t, int64_t dim = 32);

}  // namespace vat
