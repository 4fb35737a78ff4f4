#pragma once

#include <string>

#include "vat/env.hpp"
#include "vat/model.hpp"
#include "vat/train.hpp"

namespace vat {

// Union of model, training, and environment settings, parsed from a
// line-oriented UTF-8 `key = value` file with `#` comments. Every key is
// validated against the schema; unknown keys are rejected with the line
// number. docs/config_schema.md documents all keys and defaults.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    int64_t env_max_steps = 80;
    int64_t episodes_per_task = 50;

    EnvConfig env_config() const {
        EnvConfig e;
        e.image_h = model.image_h;
        e.image_w = model.image_w;
        e.max_steps = env_max_steps;
        return e;
    }

    void validate() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace vat
