#include "card/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace card {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t s = root;
    std::uint64_t z = splitmix64(s);
    s = z ^ (stream * 0xD1342543DE82EF95ull + 0x2545F4914F6CDD1Dull);
    return splitmix64(s);
}

double Rng::uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) {
    if (!(a < b)) throw std::invalid_argument("Rng::uniform: empty interval");
    return a + (b - a) * uniform();
}

double Rng::normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log away from zero
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
    std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = index(i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace card
