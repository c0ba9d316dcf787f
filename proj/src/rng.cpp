#include "hybem/rng.hpp"

#include <cmath>

namespace hybem::rng {
namespace {

constexpr std::uint32_t kW32A = 0x9E3779B9u;  // golden ratio
constexpr std::uint32_t kW32B = 0xBB67AE85u;  // sqrt(3) - 1
constexpr std::uint32_t kM4x32A = 0xD2511F53u;
constexpr std::uint32_t kM4x32B = 0xCD9E8D57u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t prod = static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b);
  hi = static_cast<std::uint32_t>(prod >> 32);
  lo = static_cast<std::uint32_t>(prod);
}

inline std::array<std::uint32_t, 4> round_once(const std::array<std::uint32_t, 4>& c,
                                               const std::array<std::uint32_t, 2>& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kM4x32A, c[0], hi0, lo0);
  mulhilo(kM4x32B, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

// Two uniforms per block: 53 random bits each, mapped to the open interval.
inline double to_unit(std::uint32_t hi_word, std::uint32_t lo_word) {
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(hi_word >> 5) << 26) | static_cast<std::uint64_t>(lo_word >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

inline std::array<std::uint32_t, 4> block(std::uint64_t seed, Stream stream, std::uint64_t path,
                                          std::uint64_t step, std::uint32_t draw) {
  const auto tag = static_cast<std::uint32_t>(stream);
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed) ^ (tag * kW32A),
      static_cast<std::uint32_t>(seed >> 32) ^ (tag * kW32B)};
  const std::array<std::uint32_t, 4> counter = {
      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
      static_cast<std::uint32_t>(path), draw};
  return philox4x32(counter, key);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) {
    counter = round_once(counter, key);
    key[0] += kW32A;
    key[1] += kW32B;
  }
  return counter;
}

double uniform(std::uint64_t seed, Stream stream, std::uint64_t path, std::uint64_t step,
               std::uint32_t draw) {
  const auto x = block(seed, stream, path, step, draw);
  return to_unit(x[0], x[1]);
}

void fill_normals(std::uint64_t seed, Stream stream, std::uint64_t path, std::uint64_t step,
                  double* out, int count) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  int produced = 0;
  std::uint32_t draw = 0;
  while (produced < count) {
    const auto x = block(seed, stream, path, step, draw++);
    const double u1 = to_unit(x[0], x[1]);
    const double u2 = to_unit(x[2], x[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    out[produced++] = radius * std::cos(two_pi * u2);
    if (produced < count) out[produced++] = radius * std::sin(two_pi * u2);
  }
}

}  // namespace hybem::rng
