#pragma once

#include <Eigen/Core>
#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nbi {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised for malformed inputs and broken preconditions.
struct ValidationError : Error {
    using Error::Error;
};

struct DimensionMismatch : ValidationError {
    DimensionMismatch(Index expected, Index actual, const std::string& where)
        : ValidationError(where + ": expected dimension " + std::to_string(expected) + ", got " +
                          std::to_string(actual)),
          expected(expected),
          actual(actual) {}
    Index expected;
    Index actual;
};

/// A kernel produced a non-finite state. `step` is the 1-based step index that
/// failed; `trajectory` is -1 outside batch simulation.
struct SimulationDiverged : Error {
    SimulationDiverged(Index step, Index trajectory, const std::string& detail = {})
        : Error(message(step, trajectory, detail)), step(step), trajectory(trajectory) {}
    Index step;
    Index trajectory;

private:
    static std::string message(Index step, Index trajectory, const std::string& detail) {
        std::string m = "simulation diverged at step " + std::to_string(step);
        if (trajectory >= 0) m += " of trajectory " + std::to_string(trajectory);
        if (!detail.empty()) m += " (" + detail + ")";
        return m;
    }
};

struct NumericFailure : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer. Fixed so that derived seeds are reproducible across
/// implementations.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Sub-seed for stream `index` of `master`:
///   derive_seed(m, i) = mix64(mix64(m) ^ (i * 0xD1B54A32D192ED03))
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return mix64(mix64(master) ^ (index * 0xD1B54A32D192ED03ull));
}

/// xoshiro256++ bit generator, state expanded from a 64-bit seed with mix64.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;
    explicit Xoshiro256(std::uint64_t seed = 0) {
        for (auto& w : s_) {
            seed += 0x9E3779B97F4A7C15ull;
            w = mix64(seed);
        }
    }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()() noexcept {
        const std::uint64_t out = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return out;
    }
    bool operator==(const Xoshiro256&) const = default;

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

/// Random stream used by every kernel: xoshiro256++ bits, ziggurat normals,
/// 53-bit uniforms. Copying an Rng forks the stream; both copies then produce
/// identical draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    std::uint64_t bits() { return engine_(); }
    /// Uniform integer on [0, n).
    Index below(Index n) { return std::uniform_int_distribution<Index>(0, n - 1)(engine_); }

    /// Fills `out` with iid N(0, 1) draws in coordinate order.
    template <typename Derived>
    void fill_normal(Eigen::DenseBase<Derived>& out) {
        for (Index i = 0; i < out.size(); ++i) out.derived().coeffRef(i) = normal();
    }
    Vector normal_vector(Index n) {
        Vector v(n);
        fill_normal(v);
        return v;
    }

    Xoshiro256& engine() { return engine_; }

private:
    Xoshiro256 engine_;
    boost::random::normal_distribution<double> normal_{0.0, 1.0};
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
    return x.derived().array().isFinite().all();
}

}  // namespace nbi
