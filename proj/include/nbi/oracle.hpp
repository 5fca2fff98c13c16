#pragma once

#include "nbi/core.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace nbi {

/// Finite Markov chain with a well/core decomposition. `P` is row-stochastic;
/// `wells` partition {0..S-1}; `cores[w]` is a non-empty subset of `wells[w]`.
struct FiniteChain {
    Matrix P;
    std::vector<std::vector<Index>> wells;
    std::vector<std::vector<Index>> cores;

    Index size() const { return P.rows(); }
    /// Well containing each state.
    std::vector<Index> well_of() const;
    void validate() const;
};

struct ChainFixture {
    FiniteChain chain;
    Index t_star = 1;
    Index T = 2;
};

/// {"P": [[...]], "wells": [[...]], "cores": [[...]], "t_star": t, "T": T}
ChainFixture chain_from_json(const nlohmann::json& j);
nlohmann::json chain_to_json(const ChainFixture& fixture);

/// Probability that the chain started at `x` has left well `well` by step T,
/// i.e. P(tau <= T) with tau the first step outside the well. T = 0 gives 0.
double exit_probability(const FiniteChain& chain, Index x, Index well, Index T);

struct MixingGap {
    double epsilon = 0.0;
    Vector qsd;  ///< quasi-stationary distribution over the well's states, in `wells[w]` order
    double survival_rate = 0.0;  ///< leading eigenvalue of the well block
};

/// Quasi-stationary distribution of the substochastic block of P on the well,
/// by power iteration to an L1 residual below 1e-12, and the largest TV distance
/// from it of the survival-conditioned law at step t over starts in `core`.
/// Throws NumericFailure ("no unique quasi-stationary distribution") if the
/// block is not primitive.
MixingGap conditional_mixing_gap(const FiniteChain& chain, Index well, const std::vector<Index>& core, Index t);
MixingGap conditional_mixing_gap(const FiniteChain& chain, Index well, Index t);

double total_variation(const Vector& p0, const Vector& p1);

/// Error of the Bayes classifier between two equally likely laws, (1 - TV)/2,
/// evaluated as sum min(p0, p1) over the summed masses so identical inputs
/// give exactly 1/2 and disjoint supports exactly 0.
double bayes_risk(const Vector& p0, const Vector& p1);

struct PairCheck {
    Index x0 = 0;
    Index x1 = 0;
    bool same_well = false;
    double risk = 0.0;
    double bound = 0.0;  ///< lower bound if same_well, else upper bound
    bool holds = true;
};

struct TheoremReport {
    Index t_star = 0;
    Index T = 0;
    double delta = 0.0;
    double epsilon = 0.0;
    std::vector<double> well_delta;
    std::vector<double> well_epsilon;
    std::vector<PairCheck> pairs;
    /// Hypotheses that fail (e.g. epsilon >= 1/2, a well without a unique
    /// quasi-stationary distribution). Reported, not thrown.
    std::vector<std::string> assumption_violations;

    Index violations() const;
    bool hypotheses_hold() const { return assumption_violations.empty(); }
    nlohmann::json to_json() const;
};

/// Exact check of the identifiability bounds on every pair of distinct core
/// states: same-well risk >= (1 - delta)(1/2 - epsilon), cross-well risk <=
/// delta, each with 1e-12 slack for rounding. Requires t_star < T.
TheoremReport verify_theorem1(const FiniteChain& chain, Index t_star, Index T);

}  // namespace nbi
