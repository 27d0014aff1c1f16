#include "blalm/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace blalm {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t SeededRng::next_u64() noexcept {
    // Mixing the seed first decorrelates streams whose seeds differ by one.
    const std::uint64_t key = splitmix64(seed_ ^ 0x6A09E667F3BCC909ULL);
    return splitmix64(key + 0x9E3779B97F4A7C15ULL * ++counter_);
}

double SeededRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SeededRng::below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next_u64();
    while (r >= limit) {
        r = next_u64();
    }
    return r % n;
}

SeededRng SeededRng::fork(std::uint64_t stream) const noexcept {
    return SeededRng(splitmix64(seed_ + 0xD1B54A32D192ED03ULL * (stream + 1)), 0);
}

}  // namespace blalm
