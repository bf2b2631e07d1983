#pragma once

#include <cstdint>

// Tags separating the random streams of different experiments, so that e.g. a
// strong-error replication never reuses the draws of an MLMC sample.
namespace mvsde::streams {

inline constexpr std::uint64_t kPath = 0x7061746800000001ull;
inline constexpr std::uint64_t kStrongError = 0x7374726f00000002ull;
inline constexpr std::uint64_t kDeviation = 0x6465766900000003ull;
inline constexpr std::uint64_t kGap = 0x6761700000000004ull;
inline constexpr std::uint64_t kLevel = 0x6c766c0000000005ull;
inline constexpr std::uint64_t kChaos = 0x6368616f00000006ull;
inline constexpr std::uint64_t kChaosReference = 0x6368726600000007ull;
inline constexpr std::uint64_t kChaosPathwise = 0x6368707700000008ull;

}  // namespace mvsde::streams
