#pragma once

#include <cstdint>
#include <string_view>

namespace stereocorr {

// Named sub-stream seeds: all randomness flows from one base seed, and each
// component (init, sampling, split, synth) draws from its own stream so runs
// can be reproduced piecewise.
inline std::uint64_t substream(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (const char c : tag) {
        h ^= std::uint64_t(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    return base ^ h;
}

} // namespace stereocorr
