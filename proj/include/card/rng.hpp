#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace card {

// Seed splitting: every parallel unit of work (trial, corpus, worker) gets
// its own stream via mix_seed(root, index). The split runs the index through
// splitmix64 starting from the root seed, so streams are decorrelated and a
// run is reproducible regardless of how work is scheduled across threads.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    static Rng stream(std::uint64_t root, std::uint64_t idx) { return Rng(mix_seed(root, idx)); }

    std::uint64_t next_u64() { return gen_(); }
    double uniform();  // [0, 1)
    double uniform(double a, double b);
    double normal();  // Box-Muller, one value per call
    bool bernoulli(double p) { return uniform() < p; }
    std::size_t index(std::size_t n);  // uniform over {0, ..., n-1}
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::mt19937_64 gen_;
};

}  // namespace card
