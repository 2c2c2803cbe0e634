#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlsr/model.hpp"
#include "mlsr/registry.hpp"

namespace mlsr {

// Checkpoint directory layout:
//   manifest.json  ordered [{name, shape, dtype}]
//   weights.bin    little-endian f32 buffers concatenated in manifest order
//   config.json    the ModelConfig that built the registry
// Trainer state (optional sidecar):
//   trainer_state.json  {iteration, seed, adam_step, moments: "moments.bin"}
//   moments.bin         per parameter, m then v, manifest order

void save_checkpoint(const std::string& dir, const ParamRegistry<float>& reg,
                     const ModelConfig& cfg);

// Loads weights into an already-built registry; manifest names must match the
// registry exactly. On mismatch the error lists missing and unexpected keys.
void load_checkpoint(const std::string& dir, ParamRegistry<float>& reg);

ModelConfig checkpoint_config(const std::string& dir);

struct TrainerState {
    std::int64_t iteration = 0;
    std::uint64_t seed = 0;
    std::int64_t adam_step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

void save_trainer_state(const std::string& dir, const TrainerState& state);
std::optional<TrainerState> load_trainer_state(const std::string& dir);

}  // namespace mlsr
