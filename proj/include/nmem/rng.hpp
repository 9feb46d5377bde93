#pragma once

#include <cstdint>

namespace nmem {

// SplitMix64 finalizer; used to derive decorrelated substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for substream `tag` of unit `unit` under a master seed. Units are
// subjects or bootstrap replicates; tags separate draws within a unit so
// each generation step is reproducible in isolation.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t unit,
                                 std::uint64_t tag) {
  return splitmix64(splitmix64(master ^ (0xd1b54a32d192ed03ULL * (unit + 1))) ^
                    (0x94d049bb133111ebULL * (tag + 1)));
}

}  // namespace nmem
