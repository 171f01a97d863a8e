#pragma once

#include <filesystem>

#include "pflab/adam.hpp"
#include "pflab/net.hpp"

namespace pflab {

// Flat binary checkpoint, little endian:
//   magic "PFCK" | u32 version | u64 P | P f64 params (canonical order)
//   | P f64 first moments | P f64 second moments | u64 step_count
// Round-trips bit-exactly.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ActorCritic& net,
                     const AdamState& adam);

// Validates magic, version, parameter count and exact file length before
// overwriting anything in `net`/`adam`.
void load_checkpoint(const std::filesystem::path& path, ActorCritic& net,
                     AdamState& adam);

}  // namespace pflab
