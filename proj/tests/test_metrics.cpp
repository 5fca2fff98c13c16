#include "nbi/metrics.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

using nbi::ari;
using nbi::Index;
using nbi::LabelVector;
using nbi::nmi;

namespace {

/// Plug-in entropy of a label sequence, in nats.
double entropy_of(const std::vector<std::pair<Index, Index>>& keys) {
    std::map<std::pair<Index, Index>, double> counts;
    for (const auto& k : keys) counts[k] += 1.0;
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        const double p = c / static_cast<double>(keys.size());
        h -= p * std::log(p);
    }
    return h;
}

double brute_force_nmi(const LabelVector& a, const LabelVector& b) {
    std::vector<std::pair<Index, Index>> ka, kb, kab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ka.emplace_back(a[i], 0);
        kb.emplace_back(0, b[i]);
        kab.emplace_back(a[i], b[i]);
    }
    const double ha = entropy_of(ka), hb = entropy_of(kb), hab = entropy_of(kab);
    return (ha + hb - hab) / (0.5 * (ha + hb));
}

/// Rand-index pair counting over all N choose 2 pairs.
double brute_force_ari(const LabelVector& a, const LabelVector& b) {
    double both = 0, in_a = 0, in_b = 0, total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            both += sa && sb;
            in_a += sa;
            in_b += sb;
            total += 1;
        }
    }
    const double expected = in_a * in_b / total;
    return (both - expected) / (0.5 * (in_a + in_b) - expected);
}

LabelVector random_labels(std::mt19937_64& g, std::size_t n, Index k) {
    std::uniform_int_distribution<Index> d(0, k - 1);
    LabelVector v(n);
    for (auto& x : v) x = d(g);
    return v;
}

LabelVector rename(const LabelVector& v, std::mt19937_64& g) {
    const Index k = *std::max_element(v.begin(), v.end()) + 1;
    std::vector<Index> names(static_cast<std::size_t>(k));
    std::iota(names.begin(), names.end(), Index{0});
    std::shuffle(names.begin(), names.end(), g);
    for (auto& n : names) n = n * 7 + 3;  // non-contiguous names too
    LabelVector out;
    for (Index x : v) out.push_back(names[static_cast<std::size_t>(x)]);
    return out;
}

}  // namespace

TEST_CASE("ari of identical multi-cluster partitions is 1") {
    CHECK(ari({0, 0, 1, 1, 2}, {0, 0, 1, 1, 2}) == 1.0);
    CHECK(ari({0, 1, 2, 3}, {3, 2, 1, 0}) == 1.0);
}

TEST_CASE("ari of the crossed four-point partitions is exactly -1/2") {
    CHECK(ari({0, 0, 1, 1}, {0, 1, 0, 1}) == -0.5);
    CHECK(brute_force_ari({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(-0.5));
}

TEST_CASE("single-cluster prediction against several true clusters scores 0") {
    CHECK(ari({0, 0, 0, 0, 0, 0}, {0, 0, 1, 1, 2, 2}) == 0.0);
    CHECK(ari({0, 0, 1, 1, 2, 2}, {5, 5, 5, 5, 5, 5}) == 0.0);
    CHECK(ari({4, 4, 4}, {1, 1, 1}) == 1.0);
    CHECK(ari({0}, {0}) == 1.0);
}

TEST_CASE("ari matches pair counting on random inputs") {
    std::mt19937_64 g(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_labels(g, 30, 4);
        const auto b = random_labels(g, 30, 3);
        CHECK(ari(a, b) == doctest::Approx(brute_force_ari(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("nmi edge cases") {
    CHECK(nmi({0, 0, 1, 1, 2}, {2, 2, 0, 0, 1}) == 1.0);
    CHECK(nmi({0, 1, 0, 1}, {3, 3, 3, 3}) == 0.0);
    CHECK(nmi({3, 3, 3, 3}, {0, 1, 0, 1}) == 0.0);
    CHECK(nmi({7, 7}, {1, 1}) == 1.0);
}

TEST_CASE("nmi of [0,0,1,1] vs [0,0,1,2] matches direct entropy arithmetic") {
    const LabelVector a{0, 0, 1, 1}, b{0, 0, 1, 2};
    CHECK(nmi(a, b) == doctest::Approx(brute_force_nmi(a, b)).epsilon(1e-14));
    CHECK(nmi(a, b) == doctest::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("metrics reject mismatched or invalid labels") {
    CHECK_THROWS_AS(ari({0, 1}, {0}), nbi::DimensionMismatch);
    CHECK_THROWS_AS(nmi({0, 1}, {0, 1, 2}), nbi::DimensionMismatch);
    CHECK_THROWS_AS(ari({}, {}), nbi::ValidationError);
    CHECK_THROWS_AS(nmi({-1, 0}, {0, 0}), nbi::ValidationError);
}

TEST_CASE("symmetry, label-permutation invariance and ranges on random pairs") {
    std::mt19937_64 g(42);
    std::uniform_int_distribution<std::size_t> len(2, 60);
    std::uniform_int_distribution<Index> clusters(1, 6);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = len(g);
        const auto a = random_labels(g, n, clusters(g));
        const auto b = random_labels(g, n, clusters(g));
        const auto b_renamed = rename(b, g);
        const auto a_renamed = rename(a, g);
        CHECK(ari(a, b) == ari(b, a));
        CHECK(nmi(a, b) == nmi(b, a));
        CHECK(ari(a, b_renamed) == ari(a, b));
        CHECK(ari(a_renamed, b) == ari(a, b));
        CHECK(nmi(a, b_renamed) == nmi(a, b));
        CHECK(nmi(a_renamed, b) == nmi(a, b));
        CHECK(ari(a, b) <= 1.0);
        CHECK(ari(a, b) >= -1.0);
        CHECK(nmi(a, b) >= 0.0);
        CHECK(nmi(a, b) <= 1.0);
    }
}
