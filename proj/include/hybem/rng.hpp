#pragma once

#include <array>
#include <cstdint>

namespace hybem::rng {

/// Logical random streams. Draws from distinct streams are independent even
/// when they share (seed, path, step), so chain sampling, Brownian increments
/// and resampling never collide.
enum class Stream : std::uint32_t {
  chain = 0,          // regime chain of a single path
  chain_partner = 1,  // pre-meeting chain of the coupled partner
  noise = 2,          // Brownian increments
  subsample = 3,      // measure subsampling / bootstrap
  scan = 4,           // box sampling for assumption scans
};

/// Philox4x32-10 block cipher. Counter-based: the caller owns the counter
/// layout, identical inputs give identical outputs on every platform.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// One 53-bit uniform in the open interval (0,1), addressed by logical
/// coordinates. Pure function of its arguments.
double uniform(std::uint64_t seed, Stream stream, std::uint64_t path, std::uint64_t step,
               std::uint32_t draw);

/// Fills out[0..count) with standard normals via Box-Muller, two per Philox
/// block. Addressing matches uniform(); the draw index advances internally.
void fill_normals(std::uint64_t seed, Stream stream, std::uint64_t path, std::uint64_t step,
                  double* out, int count);

}  // namespace hybem::rng
