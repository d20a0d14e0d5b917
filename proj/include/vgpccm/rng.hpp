#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vgpccm {

// SplitMix64 finalizer; decorrelates nearby integer seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives a child seed from a base seed and a path of stream indices.
// Used everywhere a task, permutation or Monte Carlo draw needs its own
// independent stream so that results do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(base);
    for (std::uint64_t p : path) {
        s = mix64(s ^ (p + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2)));
    }
    return s;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) {
    return derive_seed(base, {a});
}

// Deterministic random stream with the handful of draws this project needs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(gen_);
    }

    double normal() { return normal_(gen_); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_;
};

}  // namespace vgpccm
