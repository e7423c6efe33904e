#pragma once

#include <cstdint>

namespace signsynth {

// splitmix64 finalizer. Bijective on 64-bit values.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Combines two 64-bit values into one well-mixed seed. Used to derive
/// independent streams from (master_seed, sample_index, stream tag, ...).
inline uint64_t mix_pair(uint64_t a, uint64_t b) {
    uint64_t h = mix64(a + 0x9E3779B97F4A7C15ull);
    h ^= mix64(b + 0xD1B54A32D192ED03ull);
    return mix64(h);
}

/// Deterministic splitmix64 stream. The library never uses <random>
/// distributions so that draw sequences are identical on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        return mix64(z);
    }

    /// Uniform real in [lo, hi). uniform(v, v) returns exactly v.
    double uniform(double lo, double hi) {
        const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    /// Uniform integer in [lo, hi], inclusive, without modulo bias.
    int uniform_int(int lo, int hi) {
        if (hi <= lo)
            return lo;
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const uint64_t threshold = (0 - span) % span;  // 2^64 mod span
        for (;;) {
            const uint64_t x = next_u64();
            if (x >= threshold)
                return lo + static_cast<int>(x % span);
        }
    }

private:
    uint64_t state_;
};

// Stream tags keeping scalar parameter draws separate from per-pixel noise.
inline constexpr uint64_t kScalarStream = 0x01;
inline constexpr uint64_t kJitterStream = 0x02;

/// Seed material shared by all substreams of one sample.
inline uint64_t sample_seed(uint64_t master_seed, uint64_t sample_index) {
    return mix_pair(master_seed, sample_index);
}

/// Scalar-parameter stream for a sample. Depends only on
/// (master_seed, sample_index); order of generation across samples is
/// irrelevant, which is what makes parallel generation deterministic.
inline Rng derive_sample_rng(uint64_t master_seed, uint64_t sample_index) {
    return Rng(mix_pair(sample_seed(master_seed, sample_index), kScalarStream));
}

/// Private per-placement stream for pixel-level jitter noise.
inline Rng derive_jitter_rng(uint64_t master_seed, uint64_t sample_index,
                             uint64_t placement_ordinal) {
    return Rng(mix_pair(sample_seed(master_seed, sample_index),
                        mix_pair(kJitterStream, placement_ordinal)));
}

}  // namespace signsynth
