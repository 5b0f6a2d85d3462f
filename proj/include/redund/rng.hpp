#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace redund {

/// splitmix64 finalizer; used to derive independent per-replication seeds.
inline constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept
{
    return mix_seed(mix_seed(base) ^ (stream * 0xd1b54a32d192ed03ULL));
}

/// A seeded random stream. Not thread-safe; give each thread its own.
class RandomStream {
public:
    using engine_type = std::mt19937_64;

    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept
    {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double exponential(double mean) noexcept { return -mean * std::log(uniform()); }

    double standard_gamma(double shape)
    {
        std::gamma_distribution<double> dist(shape, 1.0);
        return dist(engine_);
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n)
    {
        std::uniform_int_distribution<std::size_t> dist(0, n - 1);
        return dist(engine_);
    }

    engine_type& engine() noexcept { return engine_; }

private:
    engine_type engine_;
};

} // namespace redund
