#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cemlab {

// Counter-based generator: the i-th raw draw is splitmix64(key + (i + 1) * golden).
// Raw integer streams are identical on every platform for a given (seed, stream).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller (two uniforms per draw).
    double normal();
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Independent child seed for a named stream, e.g. derive_seed(7, "init", 2).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, CounterRng& rng);

// `count` distinct indices from 0..n-1, uniformly at random, sorted ascending.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, CounterRng& rng);

}  // namespace cemlab
