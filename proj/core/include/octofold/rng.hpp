// Counter-based pseudo-random stream (splitmix64 finalizer). A draw depends
// only on (seed, counter), so dropout masks and initializers are reproducible
// across platforms and independent of how many other streams exist.
#pragma once

#include <cstdint>

namespace octofold {

class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + counter_++ * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Derives an independent stream keyed by `stream`; this stream is not advanced.
    RngStream fork(std::uint64_t stream) const {
        RngStream probe(seed_ ^ (0xD1B54A32D192ED03ull * (stream + 1)), 0);
        return RngStream(probe.next_u64(), 0);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace octofold
