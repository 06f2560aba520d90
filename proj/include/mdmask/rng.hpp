#pragma once

#include <cstdint>
#include <vector>

namespace mdmask {

// Deterministic, platform-independent PRNG (xoshiro256** seeded via splitmix64).
// All derived distributions use only IEEE-exact arithmetic so streams are
// bit-reproducible across compilers and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Unbiased-enough bounded integer; deterministic regardless of bound.
    uint64_t next_below(uint64_t bound) { return next_u64() % bound; }

    // Approximately standard normal: sum of 12 uniforms minus 6.
    // Uses only additions, so it is exactly reproducible everywhere.
    float normal() {
        float s = 0.0f;
        for (int i = 0; i < 12; ++i) s += next_float();
        return s - 6.0f;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent child stream, e.g. per-epoch or per-split.
    Rng fork(uint64_t salt) {
        uint64_t x = next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
        return Rng(splitmix64(x));
    }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t state_[4];
};

// FNV-1a over raw bytes; used for content digests of weight buffers.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace mdmask
