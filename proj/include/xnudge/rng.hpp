#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace xnudge {

// Splitmix64 finalizer. Used both as the PRNG step and for seed derivation,
// so every random stream in the toolkit is a pure function of (seed, path).
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive a child seed from a base seed and a path of integers. Derivation is
/// associative-free on purpose: derive(s, {a, b}) != derive(s, {b, a}).
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path) {
    uint64_t h = splitmix64(base);
    for (uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

// Named sub-streams so independent uses of the same (seed, index) never collide.
namespace stream {
constexpr uint64_t tree = 0x01;
constexpr uint64_t lime = 0x02;
constexpr uint64_t augment = 0x03;
constexpr uint64_t indep = 0x04;
constexpr uint64_t adopt = 0x05;
constexpr uint64_t expl_kind = 0x06;
constexpr uint64_t population = 0x07;
constexpr uint64_t restart = 0x08;
constexpr uint64_t init = 0x09;
constexpr uint64_t shuffle = 0x0a;
constexpr uint64_t fold = 0x0b;
constexpr uint64_t synth = 0x0c;
constexpr uint64_t split = 0x0d;
constexpr uint64_t perm = 0x0e;
constexpr uint64_t pool = 0x0f;
} // namespace stream

/// Counter-based splitmix64 generator. Hand-rolled distributions keep output
/// identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (no cached second value).
    double gaussian() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform integer in [0, n). Lemire's multiply-shift; slight bias is
    /// irrelevant here, determinism is not.
    size_t uniform_index(size_t n) {
        return static_cast<size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace xnudge
