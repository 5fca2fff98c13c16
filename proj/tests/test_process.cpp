#include "nbi/process.hpp"
#include "nbi/samplers.hpp"

#include "doctest.h"

#include <atomic>
#include <sstream>

using namespace nbi;

namespace {

FunctionKernel identity_kernel(Index dim) {
    return FunctionKernel(dim, [](const Vector& x, Rng&) { return x; });
}

FunctionKernel shift_kernel() {
    return FunctionKernel(1, [](const Vector& x, Rng&) { return Vector(x.array() + 1.0); });
}

FunctionKernel random_walk(Index dim) {
    return FunctionKernel(dim, [](const Vector& x, Rng& rng) { return Vector(x + 0.1 * rng.normal_vector(x.size())); });
}

MalaKernel gaussian_mala(Index dim) {
    MixtureParams p;
    p.means = Matrix::Zero(dim, 1);
    p.weights = Vector::Ones(1);
    p.sigmas = Vector::Ones(1);
    return MalaKernel({make_mixture(EnergyKind::isotropic_gmm, p), 0.1, 1.0});
}

}  // namespace

TEST_CASE("seed derivation matches the documented mixing function") {
    CHECK(derive_seed(0, 0) == 0xa706dd2f4d197e6full);
    CHECK(derive_seed(42, 7) == 0x0d4471d7a7c7c61cull);
    CHECK(derive_seed(20240601, 3) == 0x5933e8f53b34334eull);
    static_assert(derive_seed(1, 2) != derive_seed(2, 1));
}

TEST_CASE("xoshiro256++ stream matches an independent implementation") {
    Xoshiro256 g(12345);
    CHECK(g() == 0x15b66d9ee36f11ceull);
    CHECK(g() == 0x63b980008bff3cbbull);
    CHECK(g() == 0xde38b72a4e71b0d0ull);
}

TEST_CASE("rng copies fork identical streams") {
    Rng a(7);
    a.normal();
    Rng b = a;
    for (int i = 0; i < 50; ++i) {
        CHECK(a.normal() == b.normal());
        CHECK(a.uniform() == b.uniform());
    }
    Rng u(3);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
}

TEST_CASE("identity kernel keeps every state at init") {
    const auto k = identity_kernel(2);
    const Vector init = Vector::LinSpaced(2, 1, 2);
    const auto path = simulate_trajectory(k, init, 3, 1);
    REQUIRE(path.size() == 4);
    for (const auto& x : path) CHECK(x == init);

    const TrajectoryBatch b = simulate_batch(k, init, 5, 100, 9);
    for (Index i = 0; i < b.states.rows(); ++i) CHECK(b.states.row(i).transpose() == init);
}

TEST_CASE("shift kernel composes") {
    const auto path = simulate_trajectory(shift_kernel(), Vector::Zero(1), 2, 0);
    REQUIRE(path.size() == 3);
    CHECK(path[0](0) == 0.0);
    CHECK(path[1](0) == 1.0);
    CHECK(path[2](0) == 2.0);
    CHECK(simulate_trajectory(shift_kernel(), Vector::Zero(1), 0, 0).size() == 1);
}

TEST_CASE("MALA trajectory matches a hand-coded step with the same stream") {
    const Index dim = 3;
    const double eta = 0.1;
    const auto k = gaussian_mala(dim);
    Vector x0(dim);
    x0 << 0.5, -1.0, 2.0;
    const auto path = simulate_trajectory(k, x0, 3, 77);

    // U(x) = |x|^2/2 + const, grad U = x.
    Rng rng(77);
    Vector x = x0;
    for (int t = 1; t <= 3; ++t) {
        Vector xi(dim);
        for (Index d = 0; d < dim; ++d) xi(d) = rng.normal();
        const Vector y = x - eta * x + std::sqrt(2 * eta) * xi;
        const double log_pi = -0.5 * y.squaredNorm() + 0.5 * x.squaredNorm();
        const double log_q_back = -(x - (y - eta * y)).squaredNorm() / (4 * eta);
        const double log_q_fwd = -(y - (x - eta * x)).squaredNorm() / (4 * eta);
        const double a = std::min(1.0, std::exp(log_pi + log_q_back - log_q_fwd));
        if (rng.uniform() < a) x = y;
        CHECK((path[static_cast<std::size_t>(t)] - x).norm() < 1e-12);
    }
}

TEST_CASE("single-trajectory batch equals simulate_trajectory with the derived seed") {
    const auto k = random_walk(2);
    const Vector init = Vector::Ones(2);
    const TrajectoryBatch b = simulate_batch(k, init, 20, 1, 1234);
    const auto path = simulate_trajectory(k, init, 20, trajectory_seed(1234, 0));
    for (Index t = 0; t <= 20; ++t) CHECK(b.state(0, t).transpose() == path[static_cast<std::size_t>(t)]);
}

TEST_CASE("batches are bit-identical across runs and worker counts") {
    const auto k = gaussian_mala(4);
    const Vector init = Vector::Constant(4, 0.3);
    const TrajectoryBatch a = simulate_batch(k, init, 50, 16, 99, StoreMode::full, 1);
    const TrajectoryBatch b = simulate_batch(k, init, 50, 16, 99, StoreMode::full, 4);
    CHECK(a.states == b.states);
    for (Index i = 0; i < a.count; ++i) CHECK(a.state(i, 0).transpose() == init);

    const TrajectoryBatch e = simulate_batch(k, init, 50, 16, 99, StoreMode::endpoints, 3);
    CHECK(e.states.rows() == 16);
    CHECK(e.endpoints() == a.endpoints());
    CHECK(simulate_batch(k, init, 50, 16, 100).states != a.states);
}

TEST_CASE("splitting the stream at step a continues the same trajectory") {
    const auto k = gaussian_mala(2);
    const Vector init = Vector::Zero(2);
    Rng whole(5);
    const auto full = simulate_trajectory(k, init, 30, whole);
    Rng split(5);
    const auto head = simulate_trajectory(k, init, 12, split);
    const auto tail = simulate_trajectory(k, head.back(), 18, split);
    CHECK(tail.back() == full.back());
    CHECK(tail[5] == full[17]);
}

TEST_CASE("interleaved simulations with distinct streams match sequential ones") {
    const auto k = random_walk(3);
    const Vector init = Vector::Zero(3);
    const auto a = simulate_trajectory(k, init, 10, 1);
    const auto b = simulate_trajectory(k, init, 10, 2);
    Rng ra(1), rb(2);
    Vector xa = init, xb = init;
    for (int t = 1; t <= 10; ++t) {
        xa = k.step(xa, ra);
        xb = k.step(xb, rb);
    }
    CHECK(xa == a.back());
    CHECK(xb == b.back());
}

TEST_CASE("non-finite states report the failing step") {
    const FunctionKernel blowup(1, [](const Vector& x, Rng&) {
        return x(0) >= 2.0 ? Vector::Constant(1, std::nan("")) : Vector(x.array() + 1.0);
    });
    try {
        simulate_trajectory(blowup, Vector::Zero(1), 10, 0);
        FAIL("expected divergence");
    } catch (const SimulationDiverged& e) {
        CHECK(e.step == 3);
        CHECK(e.trajectory == -1);
    }
    try {
        simulate_batch(blowup, Vector::Zero(1), 10, 3, 0);
        FAIL("expected divergence");
    } catch (const SimulationDiverged& e) {
        CHECK(e.step == 3);
        CHECK(e.trajectory == 0);
    }
}

TEST_CASE("bad simulation inputs are rejected") {
    const auto k = identity_kernel(2);
    CHECK_THROWS_AS(simulate_trajectory(k, Vector::Zero(3), 1, 0), DimensionMismatch);
    CHECK_THROWS_AS(simulate_trajectory(k, Vector::Zero(2), -1, 0), ValidationError);
    CHECK_THROWS_AS(simulate_batch(k, Vector::Zero(2), 1, 0, 0), ValidationError);
    CHECK_THROWS_AS(simulate_trajectory(k, Vector::Constant(2, INFINITY), 1, 0), ValidationError);
}

TEST_CASE("binary round trip is exact") {
    const TrajectoryBatch b = simulate_batch(gaussian_mala(3), Vector::Constant(3, 0.1), 7, 4, 42);
    for (StoreMode mode : {StoreMode::full, StoreMode::endpoints}) {
        const TrajectoryBatch src =
            mode == StoreMode::full ? b : simulate_batch(gaussian_mala(3), b.init, 7, 4, 42, mode);
        std::stringstream buf;
        write_binary(src, buf);
        const TrajectoryBatch back = read_binary(buf);
        CHECK(back.states == src.states);
        CHECK(back.init == src.init);
        CHECK(back.horizon == 7);
        CHECK(back.count == 4);
        CHECK(back.seed == 42);
        CHECK(back.store == mode);
    }
    std::stringstream junk("not a batch at all");
    CHECK_THROWS_AS(read_binary(junk), ValidationError);
}

TEST_CASE("csv layout") {
    const TrajectoryBatch b = simulate_batch(shift_kernel(), Vector::Zero(1), 2, 2, 0);
    std::ostringstream out;
    write_csv(b, out);
    CHECK(out.str() == "trajectory,step,x0\n0,0,0\n0,1,1\n0,2,2\n1,0,0\n1,1,1\n1,2,2\n");
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
    std::vector<std::atomic<int>> hits(200);
    parallel_for(200, 4, [&](Index i) { hits[static_cast<std::size_t>(i)]++; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    try {
        parallel_for(50, 4, [](Index i) {
            if (i % 7 == 3) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "3");
    }
}
