#pragma once

#include <cstdint>
#include <random>

namespace ddfp {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream) so that e.g. augmentation noise and
// feature-pool sampling never share state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return Rng(mix(mix(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1)));
}

}  // namespace ddfp
