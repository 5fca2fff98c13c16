#include "nbi/oracle.hpp"

#include "doctest.h"
#include "support/chains.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

using namespace nbi;
using nbi::testing::leaky_six;
using nbi::testing::random_chain;

namespace {

FiniteChain two_state(double p, double q) {
    FiniteChain c;
    c.P.resize(2, 2);
    c.P << 1 - p, p, q, 1 - q;
    c.wells = {{0}, {1}};
    c.cores = {{0}, {1}};
    return c;
}

/// Probability of having left the well by step T, by enumerating every path.
double enumerate_exit(const FiniteChain& c, Index x, const std::vector<Index>& well, Index T) {
    auto inside = [&](Index s) { return std::find(well.begin(), well.end(), s) != well.end(); };
    std::function<double(Index, Index)> go = [&](Index s, Index left) -> double {
        if (left == 0) return 0.0;
        double total = 0.0;
        for (Index n = 0; n < c.size(); ++n) {
            if (c.P(s, n) == 0.0) continue;
            total += c.P(s, n) * (inside(n) ? go(n, left - 1) : 1.0);
        }
        return total;
    };
    return go(x, T);
}

}  // namespace

TEST_CASE("exit probability examples") {
    const double p = 0.3, q = 0.6;
    const FiniteChain c = two_state(p, q);
    CHECK(exit_probability(c, 0, 0, 1) == doctest::Approx(p).epsilon(1e-15));
    CHECK(exit_probability(c, 0, 0, 0) == 0.0);
    CHECK(exit_probability(c, 0, 0, 3) == doctest::Approx(1 - std::pow(1 - p, 3)).epsilon(1e-14));

    FiniteChain whole = leaky_six(0.01);
    whole.wells = {{0, 1, 2, 3, 4, 5}};
    whole.cores = {{0, 3}};
    for (Index T : {0, 1, 10, 100}) CHECK(exit_probability(whole, 3, 0, T) == 0.0);
}

TEST_CASE("exit probability matches path enumeration") {
    const FiniteChain c = leaky_six(0.05);
    for (Index T = 0; T <= 5; ++T) {
        for (Index x : {0, 1, 2}) {
            CHECK(exit_probability(c, x, 0, T) == doctest::Approx(enumerate_exit(c, x, c.wells[0], T)).epsilon(1e-13));
        }
    }
}

TEST_CASE("exit probability rejects a start outside the well") {
    CHECK_THROWS_AS(exit_probability(two_state(0.1, 0.1), 1, 0, 2), ValidationError);
}

TEST_CASE("conditional mixing gap examples") {
    SUBCASE("single-state well is already mixed") {
        const FiniteChain c = two_state(0.2, 0.4);
        for (Index t : {0, 1, 5}) CHECK(conditional_mixing_gap(c, 0, t).epsilon == 0.0);
    }
    SUBCASE("uniform 2-state block mixes after one step") {
        const double a = 0.45;
        FiniteChain c;
        c.P.resize(3, 3);
        c.P << a, a, 1 - 2 * a, a, a, 1 - 2 * a, 0.05, 0.05, 0.9;
        c.wells = {{0, 1}, {2}};
        c.cores = {{0, 1}, {2}};
        const MixingGap g0 = conditional_mixing_gap(c, 0, 0);
        CHECK(g0.epsilon == doctest::Approx(0.5));
        for (Index t = 1; t <= 5; ++t) CHECK(conditional_mixing_gap(c, 0, t).epsilon == 0.0);
        CHECK(g0.qsd(0) == 0.5);
        CHECK(g0.survival_rate == doctest::Approx(2 * a));
    }
    SUBCASE("periodic block has no unique quasi-stationary distribution") {
        FiniteChain c;
        c.P.resize(3, 3);
        c.P << 0, 0.9, 0.1, 0.9, 0, 0.1, 0.5, 0, 0.5;
        c.wells = {{0, 1}, {2}};
        c.cores = {{0}, {2}};
        CHECK_THROWS_AS(conditional_mixing_gap(c, 0, 3), NumericFailure);
    }
}

TEST_CASE("quasi-stationary distribution is a left eigenvector of the well block") {
    const FiniteChain c = leaky_six(0.02);
    const MixingGap g = conditional_mixing_gap(c, 0, 10);
    const Matrix Q = c.P.topLeftCorner(3, 3);
    const Eigen::RowVectorXd pi = g.qsd.transpose();
    CHECK((pi * Q - g.survival_rate * pi).lpNorm<1>() < 1e-11);
    CHECK(g.qsd.sum() == doctest::Approx(1.0));
}

TEST_CASE("mixing gap is non-increasing in t for reversible blocks") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int instance = 0; instance < 10; ++instance) {
        const Index n = 2 + instance % 4;
        Matrix sym(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j <= i; ++j) sym(i, j) = sym(j, i) = u(g);
        // A symmetric block plus one absorbing-ish outside state keeps the
        // well block reversible with respect to the uniform measure.
        const double scale = 0.98 / sym.rowwise().sum().maxCoeff();
        FiniteChain c;
        c.P = Matrix::Zero(n + 1, n + 1);
        c.P.topLeftCorner(n, n) = scale * sym;
        for (Index i = 0; i < n; ++i) c.P(i, n) = 1.0 - c.P.row(i).head(n).sum();
        c.P(n, n) = 1.0;
        c.wells = {{}, {n}};
        for (Index i = 0; i < n; ++i) c.wells[0].push_back(i);
        c.cores = {c.wells[0], {n}};
        double prev = conditional_mixing_gap(c, 0, 1).epsilon;
        for (Index t = 2; t <= 50; ++t) {
            const double eps = conditional_mixing_gap(c, 0, t).epsilon;
            CHECK(eps <= prev + 1e-12);
            prev = eps;
        }
    }
}

TEST_CASE("bayes risk examples and identities") {
    Vector p(2), q(2);
    p << 0.7, 0.3;
    q << 0.4, 0.6;
    CHECK(total_variation(p, q) == doctest::Approx(0.3));
    CHECK(bayes_risk(p, q) == doctest::Approx(0.35).epsilon(1e-15));
    CHECK(bayes_risk(p, p) == 0.5);
    CHECK(bayes_risk(q, q) == 0.5);

    Vector a(4), b(4);
    a << 0.25, 0.75, 0, 0;
    b << 0, 0, 0.5, 0.5;
    CHECK(bayes_risk(a, b) == 0.0);

    CHECK_THROWS_AS(bayes_risk(p, a), DimensionMismatch);
    Vector bad(2);
    bad << 0.7, 0.7;
    CHECK_THROWS_AS(bayes_risk(p, bad), ValidationError);
}

TEST_CASE("bayes risk is symmetric and lies in [0, 1/2]") {
    std::mt19937_64 g(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        Vector p(6), q(6);
        for (Index i = 0; i < 6; ++i) {
            p(i) = u(g) < 0.3 ? 0.0 : u(g);
            q(i) = u(g) < 0.3 ? 0.0 : u(g);
        }
        p(0) += 1e-3;
        q(5) += 1e-3;
        p /= p.sum();
        q /= q.sum();
        const double r = bayes_risk(p, q);
        CHECK(r == bayes_risk(q, p));
        CHECK(r >= 0.0);
        CHECK(r <= 0.5);
        CHECK(r == doctest::Approx(0.5 * (1 - total_variation(p, q))).epsilon(1e-12));
    }
}

TEST_CASE("theorem bounds on the reducible two-block chain") {
    FiniteChain c = leaky_six(0.0);
    const TheoremReport r = verify_theorem1(c, 20, 100);
    CHECK(r.delta == 0.0);
    CHECK(r.epsilon < 2e-3);
    CHECK(r.hypotheses_hold());
    CHECK(r.violations() == 0);
    for (const auto& p : r.pairs) {
        if (p.same_well)
            CHECK(p.risk >= 0.5 - r.epsilon);
        else
            CHECK(p.risk == 0.0);
    }
}

TEST_CASE("theorem bounds on the identity chain") {
    FiniteChain c;
    c.P = Matrix::Identity(4, 4);
    c.wells = {{0}, {1}, {2}, {3}};
    c.cores = c.wells;
    const TheoremReport r = verify_theorem1(c, 3, 10);
    CHECK(r.delta == 0.0);
    CHECK(r.epsilon == 0.0);
    CHECK(r.pairs.size() == 6);
    for (const auto& p : r.pairs) {
        CHECK_FALSE(p.same_well);
        CHECK(p.risk == 0.0);
        CHECK(p.holds);
    }
}

TEST_CASE("theorem bounds on the nearly reducible six-state chain") {
    const TheoremReport r = verify_theorem1(leaky_six(1e-3), 20, 100);
    CHECK(r.hypotheses_hold());
    CHECK(r.violations() == 0);
    std::ostringstream s;
    s.precision(17);
    s << "delta=" << r.delta << " epsilon=" << r.epsilon;
    for (const auto& p : r.pairs)
        s << "\n  (" << p.x0 << "," << p.x1 << ") " << (p.same_well ? "same " : "cross") << " risk=" << p.risk
          << " bound=" << p.bound;
    MESSAGE(s.str());
    CHECK(r.delta == doctest::Approx(1 - std::pow(1 - 1e-3, 100)).epsilon(1e-12));
}

TEST_CASE("leak sweep: cross-well risk falls to 0 and same-well risk approaches 1/2") {
    // Leaked mass returns spread over the well, so the exact same-well risk is
    // not monotone in the leak; its lower bound is, and the gap to 1/2 is
    // controlled by epsilon, which t* drives to zero.
    for (Index t_star : {20, 60}) {
        double prev_cross = 1.0, prev_bound = 0.0, same = 0.0, eps = 1.0;
        for (double leak : {1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-5, 0.0}) {
            const TheoremReport r = verify_theorem1(leaky_six(leak), t_star, 100);
            CHECK(r.violations() == 0);
            double cross = 0.0, bound = 0.5;
            same = 0.5;
            for (const auto& p : r.pairs) {
                if (p.same_well) {
                    same = std::min(same, p.risk);
                    bound = std::min(bound, p.bound);
                } else {
                    cross = std::max(cross, p.risk);
                }
            }
            CHECK(cross <= prev_cross);
            CHECK(bound >= prev_bound);
            CHECK(same >= 0.5 - r.epsilon - r.delta - 1e-12);
            prev_cross = cross;
            prev_bound = bound;
            eps = r.epsilon;
        }
        CHECK(prev_cross == 0.0);
        CHECK(0.5 - same <= eps + 1e-12);
    }
    CHECK(conditional_mixing_gap(leaky_six(0.0), 0, 60).epsilon < 1e-7);
}

TEST_CASE("no bound violations on random chains that satisfy the hypotheses") {
    std::mt19937_64 g(2024);
    int satisfied = 0, generated = 0;
    while (satisfied < 150 && generated < 2000) {
        ++generated;
        const ChainFixture f = random_chain(g);
        const TheoremReport r = verify_theorem1(f.chain, f.t_star, f.T);
        if (!r.hypotheses_hold()) continue;
        ++satisfied;
        CHECK(r.violations() == 0);
    }
    CHECK(satisfied >= 100);
}

TEST_CASE("assumption violations are reported, not thrown") {
    FiniteChain c;
    c.P.resize(3, 3);
    c.P << 0, 1, 0, 1, 0, 0, 0, 0, 1;
    c.wells = {{0, 1}, {2}};
    c.cores = {{0, 1}, {2}};
    const TheoremReport r = verify_theorem1(c, 3, 10);
    CHECK_FALSE(r.hypotheses_hold());
    CHECK(r.violations() == 0);
}

TEST_CASE("chain validation and JSON round trip") {
    ChainFixture f{leaky_six(0.01), 5, 50};
    const ChainFixture back = chain_from_json(chain_to_json(f));
    CHECK(back.chain.P == f.chain.P);
    CHECK(back.chain.wells == f.chain.wells);
    CHECK(back.t_star == 5);
    CHECK(back.T == 50);

    FiniteChain bad = leaky_six(0.01);
    bad.P(0, 0) += 1e-6;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = leaky_six(0.01);
    bad.wells = {{0, 1, 2}, {2, 3, 4, 5}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = leaky_six(0.01);
    bad.cores = {{0, 4}, {3}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(verify_theorem1(leaky_six(0.01), 10, 10), ValidationError);
}
