#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tetradiff
{
    /**
     * Stateless counter-based random numbers.
     *
     * Every draw is a pure function of (seed, stream, index), so noise can be
     * regenerated for any (seed, step, vertex, channel) without replaying a
     * generator. The mixer is the SplitMix64 finalizer applied to a running
     * combination of the key words.
     */
    class CounterRng
    {
    public:
        explicit constexpr CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

        constexpr std::uint64_t seed() const { return seed_; }

        static constexpr std::uint64_t mix(std::uint64_t z)
        {
            z += 0x9e3779b97f4a7c15ULL;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            return z ^ (z >> 31);
        }

        constexpr std::uint64_t bits(std::uint64_t stream, std::uint64_t index) const
        {
            std::uint64_t h = mix(seed_);
            h = mix(h ^ stream);
            return mix(h ^ index);
        }

        /// Uniform in the open interval (0, 1).
        constexpr double uniform(std::uint64_t stream, std::uint64_t index) const
        {
            return (static_cast<double>(bits(stream, index) >> 11) + 0.5) * 0x1.0p-53;
        }

        /// Standard normal via Box-Muller on two sub-counters.
        double normal(std::uint64_t stream, std::uint64_t index) const
        {
            const double u1 = uniform(stream, 2 * index);
            const double u2 = uniform(stream, 2 * index + 1);
            return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }

        /// Integer in [0, n).
        constexpr std::uint64_t below(std::uint64_t stream, std::uint64_t index, std::uint64_t n) const
        {
            return static_cast<std::uint64_t>(uniform(stream, index) * static_cast<double>(n)) % n;
        }

        /// Derived generator whose streams never collide with this one's.
        constexpr CounterRng fork(std::uint64_t tag) const { return CounterRng(mix(seed_ ^ mix(tag + 0x51ed27f3ULL))); }

    private:
        std::uint64_t seed_;
    };
} // namespace tetradiff
