#pragma once

#include <cstdint>
#include <limits>

namespace r4 {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Combine values into a single 64-bit seed (order sensitive).
constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ (mix64(b) + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2)));
}

/**
 * Counter-based 64-bit generator.
 *
 * The i-th output of a stream is a pure function of (key, i), so streams can be
 * split and replayed without carrying state between calls. Satisfies
 * UniformRandomBitGenerator and works with the <random> distributions.
 */
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return at(counter_++); }

    /// Output at an absolute position without advancing.
    result_type at(std::uint64_t index) const noexcept {
        return mix64(key_ ^ mix64(index * 0xD1B54A32D192ED03ULL));
    }

    /// Independent child stream; stream i of seed s is keyed by s xor i.
    CounterRng split(std::uint64_t stream) const noexcept {
        CounterRng child(0);
        child.key_ = mix64(key_ ^ mix64(stream + 0xA0761D6478BD642FULL));
        return child;
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace r4
