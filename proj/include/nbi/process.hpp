#pragma once

#include "nbi/core.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace nbi {

/// A time-homogeneous, discrete-time Markov kernel on R^D. `step` must depend
/// only on the current state and the supplied random stream, and must be safe
/// to call concurrently with distinct streams.
class MarkovKernel {
public:
    virtual ~MarkovKernel() = default;
    virtual Index dimension() const = 0;
    virtual Vector step(const Vector& x, Rng& rng) const = 0;
};

/// Adapts a callable into a kernel; used for test kernels and one-off dynamics.
class FunctionKernel final : public MarkovKernel {
public:
    using StepFn = std::function<Vector(const Vector&, Rng&)>;
    FunctionKernel(Index dim, StepFn fn) : dim_(dim), fn_(std::move(fn)) {}
    Index dimension() const override { return dim_; }
    Vector step(const Vector& x, Rng& rng) const override { return fn_(x, rng); }

private:
    Index dim_;
    StepFn fn_;
};

enum class StoreMode { full, endpoints };

/// n independent trajectories of `horizon` steps started from `init`.
/// States are kept row-major: row i * stored_steps() + t holds trajectory i at
/// stored step t. In endpoint mode only X_horizon is kept per trajectory.
struct TrajectoryBatch {
    Vector init;
    Index horizon = 0;
    Index count = 0;
    std::uint64_t seed = 0;
    StoreMode store = StoreMode::full;
    RowMatrix states;

    Index dimension() const { return init.size(); }
    Index stored_steps() const { return store == StoreMode::full ? horizon + 1 : 1; }
    /// Step number of stored column t.
    Index step_of(Index t) const { return store == StoreMode::full ? t : horizon; }

    auto state(Index traj, Index t) const { return states.row(traj * stored_steps() + t); }
    auto endpoint(Index traj) const { return states.row(traj * stored_steps() + stored_steps() - 1); }
    /// count x D matrix of final states.
    RowMatrix endpoints() const;
};

/// Trajectory of `horizon + 1` states; element 0 is `init`. Consumes `rng`.
std::vector<Vector> simulate_trajectory(const MarkovKernel& kernel, const Vector& init, Index horizon,
                                        Rng& rng);
std::vector<Vector> simulate_trajectory(const MarkovKernel& kernel, const Vector& init, Index horizon,
                                        std::uint64_t seed);

/// Applies `steps` kernel steps to `x` in place, checking finiteness.
void advance(const MarkovKernel& kernel, Vector& x, Index steps, Rng& rng);

/// Sub-seed used for trajectory `i` of a batch seeded with `seed`.
inline std::uint64_t trajectory_seed(std::uint64_t seed, Index i) {
    return derive_seed(seed, static_cast<std::uint64_t>(i));
}

/// Simulates `count` trajectories; trajectory i uses trajectory_seed(seed, i),
/// so the result does not depend on `workers`.
TrajectoryBatch simulate_batch(const MarkovKernel& kernel, const Vector& init, Index horizon, Index count,
                               std::uint64_t seed, StoreMode store = StoreMode::full, int workers = 0);

// Worker pool helpers -------------------------------------------------------

/// Worker count from NBI_WORKERS, falling back to the hardware concurrency.
int default_workers();

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = default). If any
/// call throws, the exception from the smallest failing index is rethrown.
void parallel_for(Index n, int workers, const std::function<void(Index)>& fn);

// Serialization -------------------------------------------------------------

/// Binary layout, all fields little-endian:
///   char[8]  magic "NBITRAJ\0"
///   u32      version (1)
///   u32      store (0 = full, 1 = endpoints)
///   u64      D, n, horizon, seed
///   f64[D]   init
///   f64[...] states, row-major, n * stored_steps rows of D values
void write_binary(const TrajectoryBatch& batch, std::ostream& out);
TrajectoryBatch read_binary(std::istream& in);

/// CSV with header `trajectory,step,x0,...,x{D-1}`, one state per row.
void write_csv(const TrajectoryBatch& batch, std::ostream& out);

}  // namespace nbi
