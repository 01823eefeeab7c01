#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace buzz {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent child seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : tag) {
        h = (h ^ ch) * 1099511628211ULL;
    }
    return splitmix64(splitmix64(base ^ h) + index);
}

} // namespace buzz
