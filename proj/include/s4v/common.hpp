#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace s4v {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 2, NumericError -> 3, IoError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

std::string shape_str(const std::vector<int64_t>& shape);

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distribution transforms below are hand-rolled so streams are reproducible
// independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

    uint64_t bits() { return eng_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (one draw per pair, spare discarded)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // uniform integer in [0, n)
    int64_t randint(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

    // derive an independent stream, e.g. per parameter name
    Rng fork(uint64_t salt) const {
        uint64_t x = seed_ ^ salt;
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return Rng(x ^ (x >> 31));
    }

private:
    std::mt19937_64 eng_;
    uint64_t seed_ = 0;
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);

}  // namespace s4v
