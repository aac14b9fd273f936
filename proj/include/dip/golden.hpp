// golden.hpp
//
// Scripted rollouts whose frame checksums are frozen, so that changes to the
// environment dynamics or renderer show up as checksum drift.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "envs.hpp"

namespace dip::golden {

/// Fixed open-loop action for frame t; track reads all three values.
inline std::vector<double> scripted_action(std::size_t t)
{
    const double v = std::sin(0.7 * static_cast<double>(t));
    return {v, 0.5 + 0.5 * std::cos(0.3 * static_cast<double>(t)), 0.1};
}

/// Folds the reset frame and every stepped frame into one checksum.
inline std::uint64_t rollout_checksum(const envs::EnvConfig& cfg, std::uint64_t seed, std::size_t steps)
{
    auto st = envs::env_reset(cfg, seed);
    auto h = envs::frame_checksum(envs::render(st));
    for (std::size_t t = 0; t < steps && !envs::is_done(st); ++t)
        h = envs::frame_checksum(envs::env_step(st, scripted_action(t)).observation, h);
    return h;
}

inline constexpr std::uint64_t kDodgeSeed1 = 0x293f5a416ee00300ull;
inline constexpr std::uint64_t kTrackSeed1 = 0x182290e93143cef6ull;
inline constexpr std::uint64_t kTrackLayoutSeed1 = 0x4301d21f8776a0c5ull;

} // namespace dip::golden
