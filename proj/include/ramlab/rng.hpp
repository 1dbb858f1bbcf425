#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace ramlab {

// Counter-based generator: output i is a pure function of (key, i), so a
// stream replays identically on any platform and substreams can be split
// off without sharing mutable state.
class RngState {
public:
    RngState() = default;
    explicit RngState(uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)) {}

    uint64_t next_u64() { return mix(key_ + (++counter_) * 0xD1B54A32D192ED03ull); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next_u64() % uint64_t(hi - lo + 1));
    }

    // Box-Muller, two fresh draws per call so the stream stays counter-pure
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::vector<int> permutation(int n) {
        std::vector<int> p(size_t(n), 0);
        for (int i = 0; i < n; ++i) p[size_t(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = int(uniform_int(0, i));
            std::swap(p[size_t(i)], p[size_t(j)]);
        }
        return p;
    }

    // Independent substream addressed by (tag, index). Derivation does not
    // advance this stream, so adding a consumer never perturbs other draws.
    RngState child(std::string_view tag, uint64_t index = 0) const {
        uint64_t h = 0xCBF29CE484222325ull;
        for (char c : tag) {
            h ^= uint64_t(uint8_t(c));
            h *= 0x100000001B3ull;
        }
        RngState r;
        r.key_ = mix(mix(key_ ^ h) + index * 0x9E3779B97F4A7C15ull);
        return r;
    }

    uint64_t key() const { return key_; }

private:
    // splitmix64 finalizer
    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t key_ = 0x853C49E6748FEA9Bull;
    uint64_t counter_ = 0;
};

}  // namespace ramlab
