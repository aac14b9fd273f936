// random.hpp
#pragma once

#include <cstdint>
#include <random>

namespace dip {

/// Purposes of derived random streams inside one run. Each (seed, generation,
/// purpose, index) tuple names an independent stream.
enum class StreamPurpose : std::uint64_t {
    init = 1,
    select = 2,
    mutate = 3,
    episode = 4,
    reevaluate = 5,
    solved_check = 6,
    misc = 7,
};

/// Seeded random source. Identical (seed, stream) pairs give identical draw
/// sequences. Single owner: never share one instance between threads.
class RandomSource {
public:
    RandomSource(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        engine_.seed(seq);
    }

    /// Stream for a (generation, purpose, index) tuple under a run seed.
    static RandomSource derive(std::uint64_t seed, std::uint64_t generation, StreamPurpose purpose,
                               std::uint64_t index)
    {
        return RandomSource(seed, stream_id(generation, purpose, index));
    }

    static std::uint64_t stream_id(std::uint64_t generation, StreamPurpose purpose, std::uint64_t index)
    {
        std::uint64_t h = splitmix(generation);
        h = splitmix(h ^ static_cast<std::uint64_t>(purpose));
        return splitmix(h ^ index);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal draw.
    double normal() { return normal_(engine_); }

private:
    static std::uint64_t splitmix(std::uint64_t x)
    {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace dip
