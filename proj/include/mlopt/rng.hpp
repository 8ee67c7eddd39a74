#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mlopt
{

/**
 * Deterministic 64-bit RNG (splitmix64) with derived per-sample streams.
 *
 * The standard-library distributions are implementation-defined, which would
 * break byte-identical dataset regeneration across toolchains. All sampling
 * in this project goes through this generator instead. Each call consumes a
 * fixed number of raw draws, so streams never drift.
 */
class Rng
{
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    /* Independent stream for sample `index`, regardless of call order. */
    Rng stream(uint64_t index) const
    {
        Rng r(mix(mix(state_ ^ 0x9e3779b97f4a7c15ull, index), 0x2545f4914f6cdd1dull));
        return r;
    }

    uint64_t next_u64()
    {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix_final(state_);
    }

    /* Uniform double in [0, 1). 53-bit resolution. */
    double uniform01()
    {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi)
    {
        return lo + (hi - lo) * uniform01();
    }

    /* Uniform integer in [0, n). n must be > 0. */
    uint64_t uniform_int(uint64_t n)
    {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
    }

    /* Standard normal via Box-Muller. Consumes exactly two raw draws. */
    double normal()
    {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for (size_t i = v.size(); i > 1; i--)
        {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t mix(uint64_t a, uint64_t b)
    {
        return mix_final(a + 0x9e3779b97f4a7c15ull * (b + 1));
    }

    static uint64_t mix_final(uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

} // namespace mlopt
