#pragma once

#include <cstdint>
#include <random>

namespace gpsdd {

/// Seeded, stream-split random source. Identical (seed, stream) pairs
/// reproduce identical draw sequences; distinct stream ids are mixed into
/// the generator state so streams are statistically independent.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id), engine_(mix(seed, stream_id)) {}

    /// New independent stream derived from the same base seed.
    RngStream derive(std::uint64_t substream) const {
        return RngStream(seed_, mix(stream_, substream + 1));
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    /// Chi-distributed draw with k degrees of freedom.
    double chi(double k) {
        std::gamma_distribution<double> g(k / 2.0, 2.0);
        return std::sqrt(g(engine_));
    }

    std::mt19937_64& engine() { return engine_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    // splitmix64 finalizer; decorrelates nearby (seed, stream) pairs.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace gpsdd
