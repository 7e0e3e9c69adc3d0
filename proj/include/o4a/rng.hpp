#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace o4a {

// 64-bit FNV-1a. Used for seed derivation, config digests and the
// embedding-store id index.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64. All distributions are hand-rolled so
// streams are bit-reproducible across platforms (std:: distributions are
// implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        has_gauss_ = false;
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // integer in [lo, hi)
    int64_t range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value cached.
    double gauss() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        gauss_ = r * std::sin(2.0 * M_PI * u2);
        has_gauss_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    double gauss(double mean, double std) { return mean + std * gauss(); }

    // Marsaglia-Tsang; shape > 0.
    double gamma(double shape) {
        if (shape < 1.0) {
            double u;
            do {
                u = uniform();
            } while (u <= 0.0);
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = gauss();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Derived independent sub-stream; parallel use of forks equals serial use.
    Rng fork(uint64_t a, uint64_t b = 0) const {
        uint64_t mix = s_[0] ^ (s_[3] * 0x9e3779b97f4a7c15ull);
        mix ^= a * 0xff51afd7ed558ccdull;
        mix ^= b * 0xc4ceb9fe1a85ec53ull;
        return Rng(mix);
    }

    Rng fork(std::string_view tag, uint64_t b = 0) const {
        return fork(fnv1a(tag), b);
    }

private:
    uint64_t s_[4];
    double gauss_ = 0.0;
    bool has_gauss_;
};

// Seed for a named stream derived from a master seed.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0) {
    uint64_t h = fnv1a(tag, master ^ 0xcbf29ce484222325ull);
    uint64_t sm = h ^ (index * 0x9e3779b97f4a7c15ull);
    return splitmix64(sm);
}

} // namespace o4a
