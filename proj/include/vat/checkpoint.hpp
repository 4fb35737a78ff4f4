#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vat/model.hpp"

namespace vat {

class AdamOptimizer;

// Binary "VATC" checkpoint, version 1, little-endian:
//   "VATC" | u32 version | u32 config_text_len | config text (UTF-8)
//   | u64 param_count | f32 params in registration order
//   | u8 has_moments | [u64 adam_step | f32 m[] | f32 v[]]
// Parameters are quantized to f32 at save time on both the file and the
// live model, so save -> load reproduces values bit-exactly.
void save_checkpoint(const std::string& path, Model& model,
                     AdamOptimizer* optimizer = nullptr);

struct LoadedCheckpoint {
    ModelConfig config;
    std::unique_ptr<Model> model;
    bool has_moments = false;
    int64_t adam_step = 0;
    std::vector<std::vector<double>> moment1, moment2;  // per registry entry
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Compares architecture configs key by key; throws ConfigError naming the
// first differing key.
void require_same_architecture(const ModelConfig& expected, const ModelConfig& actual);

}  // namespace vat
