// rng.hpp - counter-based deterministic random utilities
//
// All randomness in the library flows through these helpers. They are
// counter-based (a draw is a pure function of a 64-bit key), so call sites
// key draws by (seed, stream, index) and stay order-independent and
// platform-independent.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace capmoe::rng {

// SplitMix64 finalizer; full avalanche over 64-bit inputs.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Hash-combine two keys into one.
constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(splitmix64(a) ^ b);
}

// Uniform draw in [0, 1) from a key.
inline double uniform01(std::uint64_t key) noexcept {
    return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

// Uniform draw in (0, 1]; safe as a log argument.
inline double uniform_pos(std::uint64_t key) noexcept {
    return (static_cast<double>(splitmix64(key) >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal draw from a key (Box-Muller).
inline double gaussian(std::uint64_t key) noexcept {
    const double u1 = uniform_pos(key);
    const double u2 = uniform01(splitmix64(key ^ 0xda3e39cb94b95bdbULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace capmoe::rng
