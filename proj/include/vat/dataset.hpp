#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vat/env.hpp"

namespace vat {

// One demonstration, stored as float32 payloads to match the on-disk
// format and keep memory bounded: per step view0 (3*H*W), view1 (3*H*W),
// proprio (P) and action (L), all concatenated.
struct Episode {
    int64_t task_id = 0;
    int64_t n_steps = 0;
    std::vector<float> view0;
    std::vector<float> view1;
    std::vector<float> proprio;
    std::vector<float> action;
};

struct Dataset {
    int64_t image_h = 0;
    int64_t image_w = 0;
    int64_t proprio_dim = 0;
    int64_t action_dim = 0;
    std::vector<Episode> episodes;

    int64_t total_steps() const;
};

// Binary "VATD" container, version 1, little-endian:
//   "VATD" | u32 version | u32 H | u32 W | u32 P | u32 L | u32 n_episodes
//   then per episode: u32 task_id | u32 n_steps | per step:
//   view0 f32*(3HW), view1 f32*(3HW), proprio f32*P, action f32*L.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Expected byte size of the serialized form; exposed for audits.
int64_t dataset_file_size(const Dataset& ds);

// JSON sidecar describing tasks, counts, seeds, and format version.
void write_manifest(const Dataset& ds, const std::vector<TaskSpec>& tasks,
                    int64_t episodes_per_task, uint64_t seed, const std::string& path);

// Rolls out the scripted expert for every (task, episode index) pair with
// per-episode seeds mix(seed, task_id, index). Throws ContractError if any
// expert rollout fails, so generated data is always successful.
Dataset generate_demos(const EnvConfig& env_cfg, const std::vector<TaskSpec>& tasks,
                       int64_t episodes_per_task, uint64_t seed);

}  // namespace vat
