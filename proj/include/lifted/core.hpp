#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lifted {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a closed-form output-layer solve has denominator <= 0.
struct NonPositiveCurvatureError : std::runtime_error {
    explicit NonPositiveCurvatureError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when inference produces non-finite activities.
struct DivergedError : std::runtime_error {
    DivergedError(const std::string& what, int sweep_index)
        : std::runtime_error(what), sweep(sweep_index) {}
    int sweep;
};

struct NoConvergenceError : std::runtime_error {
    explicit NoConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidSpecError : std::runtime_error {
    explicit InvalidSpecError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic RNG with hand-rolled output mappings so that streams are
// bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // splitmix warm-up decorrelates small seeds
        next();
        next();
    }

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double sigma) { return sigma * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    /// Derives an independent stream, e.g. for per-component sub-rngs.
    Rng fork(std::uint64_t stream) {
        return Rng(next() ^ (0xa0761d6478bd642fULL * (stream + 1)));
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace lifted
