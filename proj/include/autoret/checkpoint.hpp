#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "autoret/trainer.hpp"

namespace autoret {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Everything needed to resume training or evaluate a retriever.
struct Checkpoint {
    std::uint32_t format_version = kCheckpointFormatVersion;
    std::string config_json;
    TrainerState state;
    std::uint64_t index_version = 0;
    std::vector<DevPoint> dev_history;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary layout, all little-endian: magic "RCKP", u32 format version,
/// config JSON (u64 length + bytes), encoder parameters (see write_params),
/// Adam first and second moments (same tensor order, float32), u64 Adam step
/// and skip counters, u64 training step, u64 index version, u64 dev-history
/// length followed by (u64 step, f64 metric) pairs.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace autoret
