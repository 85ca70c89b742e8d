#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace thinkgen {

// splitmix64 finalizer; the whole repo draws randomness through this mix so
// that every value is a pure function of (seed, stream, counter).
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2)));
}

inline uint64_t hash_str(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (char c : s) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ull;
    }
    return h;
}

// Derives a fresh stream id from a base id and up to three tags. Used to give
// every stochastic draw site (rollout i of step s, group noise, data sampling)
// its own addressable stream.
inline uint64_t substream(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = hash_combine(base, a);
    h = hash_combine(h, b);
    return hash_combine(h, c);
}

// Counter-based PRNG: stateless apart from the draw counter, so a stream can
// be reconstructed anywhere from (seed, stream id). Independent streams never
// interact; parallel workers each own one.
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream_id)
        : key_(hash_combine(mix64(seed), stream_id)), stream_id_(stream_id) {}

    uint64_t stream_id() const { return stream_id_; }

    uint64_t next_u64() { return mix64(key_ + 0x2545F4914F6CDD1Dull * (++ctr_)); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // Box-Muller; always consumes two uniforms, never caches, so the draw
    // count is a fixed function of the call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Weighted choice over `n` nonnegative weights; total must be positive.
    template <typename GetW>
    int weighted_choice(int n, GetW&& w) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += w(i);
        double r = uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += w(i);
            if (r < acc) return i;
        }
        return n - 1;
    }

private:
    uint64_t key_;
    uint64_t stream_id_;
    uint64_t ctr_ = 0;
};

} // namespace thinkgen
