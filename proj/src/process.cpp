#include "nbi/process.hpp"

#include "byte_io.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

namespace nbi {

RowMatrix TrajectoryBatch::endpoints() const {
    RowMatrix out(count, dimension());
    for (Index i = 0; i < count; ++i) out.row(i) = endpoint(i);
    return out;
}

namespace {

void check_init(const MarkovKernel& kernel, const Vector& init) {
    if (init.size() != kernel.dimension()) throw DimensionMismatch(kernel.dimension(), init.size(), "init state");
    if (!all_finite(init)) throw ValidationError("init state has non-finite entries");
}

Vector checked_step(const MarkovKernel& kernel, const Vector& x, Rng& rng, Index t, Index traj) {
    Vector next;
    try {
        next = kernel.step(x, rng);
    } catch (const SimulationDiverged& e) {
        throw SimulationDiverged(t, traj, e.what());
    }
    if (next.size() != x.size()) throw DimensionMismatch(x.size(), next.size(), "kernel output");
    if (!all_finite(next)) throw SimulationDiverged(t, traj);
    return next;
}

}  // namespace

void advance(const MarkovKernel& kernel, Vector& x, Index steps, Rng& rng) {
    for (Index t = 1; t <= steps; ++t) x = checked_step(kernel, x, rng, t, -1);
}

std::vector<Vector> simulate_trajectory(const MarkovKernel& kernel, const Vector& init, Index horizon, Rng& rng) {
    if (horizon < 0) throw ValidationError("horizon must be non-negative");
    check_init(kernel, init);
    std::vector<Vector> path;
    path.reserve(static_cast<std::size_t>(horizon + 1));
    path.push_back(init);
    for (Index t = 1; t <= horizon; ++t) path.push_back(checked_step(kernel, path.back(), rng, t, -1));
    return path;
}

std::vector<Vector> simulate_trajectory(const MarkovKernel& kernel, const Vector& init, Index horizon,
                                        std::uint64_t seed) {
    Rng rng(seed);
    return simulate_trajectory(kernel, init, horizon, rng);
}

TrajectoryBatch simulate_batch(const MarkovKernel& kernel, const Vector& init, Index horizon, Index count,
                               std::uint64_t seed, StoreMode store, int workers) {
    if (count < 1) throw ValidationError("batch count must be at least 1");
    if (horizon < 0) throw ValidationError("horizon must be non-negative");
    check_init(kernel, init);

    TrajectoryBatch batch;
    batch.init = init;
    batch.horizon = horizon;
    batch.count = count;
    batch.seed = seed;
    batch.store = store;
    batch.states.resize(count * batch.stored_steps(), init.size());

    parallel_for(count, workers, [&](Index i) {
        Rng rng(trajectory_seed(seed, i));
        Vector x = init;
        const Index base = i * batch.stored_steps();
        if (store == StoreMode::full) batch.states.row(base) = x.transpose();
        for (Index t = 1; t <= horizon; ++t) {
            x = checked_step(kernel, x, rng, t, i);
            if (store == StoreMode::full) batch.states.row(base + t) = x.transpose();
        }
        if (store == StoreMode::endpoints) batch.states.row(base) = x.transpose();
    });
    return batch;
}

int default_workers() {
    if (const char* env = std::getenv("NBI_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(Index n, int workers, const std::function<void(Index)>& fn) {
    if (workers <= 0) workers = default_workers();
    workers = static_cast<int>(std::min<Index>(workers, n));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    Index next = 0;
    Index failed_at = n;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            Index i;
            {
                std::lock_guard lock(mu);
                if (next >= n) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kTrajMagic[8] = {'N', 'B', 'I', 'T', 'R', 'A', 'J', '\0'};
constexpr std::uint32_t kTrajVersion = 1;
}  // namespace

void write_binary(const TrajectoryBatch& batch, std::ostream& out) {
    out.write(kTrajMagic, sizeof kTrajMagic);
    io::put_u32(out, kTrajVersion);
    io::put_u32(out, batch.store == StoreMode::full ? 0u : 1u);
    io::put_u64(out, static_cast<std::uint64_t>(batch.dimension()));
    io::put_u64(out, static_cast<std::uint64_t>(batch.count));
    io::put_u64(out, static_cast<std::uint64_t>(batch.horizon));
    io::put_u64(out, batch.seed);
    io::put_f64s(out, batch.init.data(), batch.init.size());
    io::put_f64s(out, batch.states.data(), batch.states.size());
    if (!out) throw Error("failed writing trajectory batch");
}

TrajectoryBatch read_binary(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kTrajMagic)) throw ValidationError("not a trajectory batch file");
    if (io::get_u32(in) != kTrajVersion) throw ValidationError("unsupported trajectory batch version");
    const std::uint32_t store = io::get_u32(in);
    if (store > 1) throw ValidationError("bad store mode in trajectory batch");
    TrajectoryBatch batch;
    batch.store = store == 0 ? StoreMode::full : StoreMode::endpoints;
    const auto dim = static_cast<Index>(io::get_u64(in));
    batch.count = static_cast<Index>(io::get_u64(in));
    batch.horizon = static_cast<Index>(io::get_u64(in));
    batch.seed = io::get_u64(in);
    if (dim <= 0 || batch.count <= 0 || batch.horizon < 0) throw ValidationError("bad trajectory batch header");
    batch.init.resize(dim);
    io::get_f64s(in, batch.init.data(), dim);
    batch.states.resize(batch.count * batch.stored_steps(), dim);
    io::get_f64s(in, batch.states.data(), batch.states.size());
    return batch;
}

void write_csv(const TrajectoryBatch& batch, std::ostream& out) {
    out << "trajectory,step";
    for (Index d = 0; d < batch.dimension(); ++d) out << ",x" << d;
    out << '\n';
    for (Index i = 0; i < batch.count; ++i) {
        for (Index t = 0; t < batch.stored_steps(); ++t) {
            out << i << ',' << batch.step_of(t);
            const auto row = batch.state(i, t);
            for (Index d = 0; d < row.size(); ++d) out << ',' << io::format_double(row(d));
            out << '\n';
        }
    }
}

}  // namespace nbi
