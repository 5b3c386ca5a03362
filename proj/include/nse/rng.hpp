#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "nse/errors.hpp"

namespace nse {

// Single source of randomness for a run. Dropout masks, Gumbel noise,
// parameter init and epoch shuffles all draw from one seeded stream so a
// seed pins the whole trajectory.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double uniform() {
        // open interval (0,1); keeps log(-log(u)) finite
        std::uniform_real_distribution<double> d(std::numeric_limits<double>::min(), 1.0);
        return d(gen_);
    }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }

    std::uint64_t next_u64() { return gen_(); }

    // Gumbel(0,1) sample: -log(-log(U))
    double gumbel() { return -std::log(-std::log(uniform())); }

    std::vector<double> gumbel_vector(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = gumbel();
        return v;
    }

    std::vector<double> uniform_vector(std::size_t n, double lo = 0.0, double hi = 1.0) {
        std::vector<double> v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

    // Inverted-dropout mask: entries are 0 with probability `rate`,
    // otherwise 1/(1-rate), so evaluation needs no rescaling.
    std::vector<double> dropout_mask(std::size_t n, double rate) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0,1)");
        std::vector<double> m(n, 0.0);
        const double keep = 1.0 / (1.0 - rate);
        for (auto& x : m)
            if (uniform() >= rate) x = keep;
        return m;
    }

    // Glorot/Xavier uniform for a fan_in x fan_out weight matrix.
    std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        return uniform_vector(fan_in * fan_out, -bound, bound);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), gen_);
    }

    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(gen_);
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
};

}  // namespace nse
