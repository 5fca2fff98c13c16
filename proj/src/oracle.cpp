#include "nbi/oracle.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nbi {

using nlohmann::json;

std::vector<Index> FiniteChain::well_of() const {
    std::vector<Index> owner(static_cast<std::size_t>(size()), -1);
    for (std::size_t w = 0; w < wells.size(); ++w)
        for (Index s : wells[w]) owner[static_cast<std::size_t>(s)] = static_cast<Index>(w);
    return owner;
}

void FiniteChain::validate() const {
    const Index S = P.rows();
    if (S < 1 || P.cols() != S) throw ValidationError("transition matrix must be square and non-empty");
    if (!all_finite(P) || (P.array() < 0.0).any()) throw ValidationError("transition matrix entries must be finite and non-negative");
    for (Index i = 0; i < S; ++i) {
        if (std::abs(P.row(i).sum() - 1.0) > 1e-12)
            throw ValidationError("row " + std::to_string(i) + " of the transition matrix does not sum to 1");
    }
    if (wells.empty()) throw ValidationError("chain needs at least one well");
    if (cores.size() != wells.size()) throw ValidationError("need exactly one core per well");
    std::vector<int> seen(static_cast<std::size_t>(S), 0);
    for (const auto& w : wells) {
        if (w.empty()) throw ValidationError("wells must be non-empty");
        for (Index s : w) {
            if (s < 0 || s >= S) throw ValidationError("well state out of range");
            if (seen[static_cast<std::size_t>(s)]++) throw ValidationError("wells overlap at state " + std::to_string(s));
        }
    }
    for (Index s = 0; s < S; ++s)
        if (!seen[static_cast<std::size_t>(s)]) throw ValidationError("state " + std::to_string(s) + " is in no well");
    for (std::size_t w = 0; w < wells.size(); ++w) {
        if (cores[w].empty()) throw ValidationError("cores must be non-empty");
        for (Index s : cores[w]) {
            if (std::find(wells[w].begin(), wells[w].end(), s) == wells[w].end())
                throw ValidationError("core state " + std::to_string(s) + " is outside its well");
        }
    }
}

ChainFixture chain_from_json(const json& j) {
    jsonutil::check_keys(j, {"P", "wells", "cores", "t_star", "T"}, "chain");
    ChainFixture f;
    f.chain.P = jsonutil::to_matrix(j.at("P"));
    f.chain.wells = j.at("wells").get<std::vector<std::vector<Index>>>();
    f.chain.cores = j.contains("cores") ? j.at("cores").get<std::vector<std::vector<Index>>>() : f.chain.wells;
    f.t_star = j.value("t_star", f.t_star);
    f.T = j.value("T", f.T);
    f.chain.validate();
    return f;
}

json chain_to_json(const ChainFixture& f) {
    return {{"P", jsonutil::from_matrix(f.chain.P)},
            {"wells", f.chain.wells},
            {"cores", f.chain.cores},
            {"t_star", f.t_star},
            {"T", f.T}};
}

namespace {

void check_well(const FiniteChain& chain, Index well) {
    if (well < 0 || well >= static_cast<Index>(chain.wells.size())) throw ValidationError("well index out of range");
}

/// Substochastic block of P on the well, in `wells[w]` order.
Matrix well_block(const FiniteChain& chain, Index well) {
    const auto& states = chain.wells[static_cast<std::size_t>(well)];
    const auto n = static_cast<Index>(states.size());
    Matrix Q(n, n);
    for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b) Q(a, b) = chain.P(states[static_cast<std::size_t>(a)], states[static_cast<std::size_t>(b)]);
    return Q;
}

Index local_index(const FiniteChain& chain, Index well, Index state) {
    const auto& states = chain.wells[static_cast<std::size_t>(well)];
    const auto it = std::find(states.begin(), states.end(), state);
    if (it == states.end()) throw ValidationError("state " + std::to_string(state) + " is not in well " + std::to_string(well));
    return static_cast<Index>(it - states.begin());
}

/// A non-negative matrix is primitive iff its (n-1)^2 + 1 power is positive.
bool is_primitive(const Matrix& Q) {
    const Index n = Q.rows();
    using Bool = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
    const Bool B = (Q.array() > 0.0).cast<int>().matrix();
    Bool power = B;
    const Index k = (n - 1) * (n - 1) + 1;
    for (Index step = 1; step < k; ++step) power = ((power * B).array() > 0).cast<int>().matrix();
    return (power.array() > 0).all();
}

}  // namespace

double exit_probability(const FiniteChain& chain, Index x, Index well, Index T) {
    chain.validate();
    check_well(chain, well);
    if (T < 0) throw ValidationError("T must be non-negative");
    const Index start = local_index(chain, well, x);
    const auto& states = chain.wells[static_cast<std::size_t>(well)];
    const Matrix Q = well_block(chain, well);
    // Mass leaving from each well state in one step, summed directly.
    const auto owner = chain.well_of();
    Vector out = Vector::Zero(Q.rows());
    for (Index a = 0; a < Q.rows(); ++a)
        for (Index s = 0; s < chain.size(); ++s)
            if (owner[static_cast<std::size_t>(s)] != well) out(a) += chain.P(states[static_cast<std::size_t>(a)], s);

    Eigen::RowVectorXd alive = Eigen::RowVectorXd::Zero(Q.rows());
    alive(start) = 1.0;
    double exited = 0.0;
    for (Index t = 0; t < T; ++t) {
        exited += alive.dot(out.transpose());
        alive = alive * Q;
    }
    return std::min(exited, 1.0);
}

MixingGap conditional_mixing_gap(const FiniteChain& chain, Index well, const std::vector<Index>& core, Index t) {
    chain.validate();
    check_well(chain, well);
    if (t < 0) throw ValidationError("t must be non-negative");
    if (core.empty()) throw ValidationError("core must be non-empty");
    const Matrix Q = well_block(chain, well);
    if (!is_primitive(Q)) throw NumericFailure("no unique quasi-stationary distribution for well " + std::to_string(well));

    MixingGap gap;
    const Index n = Q.rows();
    Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
    constexpr Index max_iter = 10'000'000;
    Index iter = 0;
    for (; iter < max_iter; ++iter) {
        Eigen::RowVectorXd next = pi * Q;
        const double mass = next.sum();
        next /= mass;
        const double residual = (next - pi).lpNorm<1>();
        pi = next;
        gap.survival_rate = mass;
        if (residual < 1e-12) break;
    }
    if (iter == max_iter) throw NumericFailure("quasi-stationary power iteration did not converge");
    gap.qsd = pi.transpose();

    for (Index x : core) {
        Eigen::RowVectorXd law = Eigen::RowVectorXd::Zero(n);
        law(local_index(chain, well, x)) = 1.0;
        for (Index s = 0; s < t; ++s) law = law * Q;
        const double alive = law.sum();
        if (!(alive > 0.0)) throw NumericFailure("conditioned law undefined: zero survival probability");
        gap.epsilon = std::max(gap.epsilon, total_variation((law / alive).transpose(), gap.qsd));
    }
    return gap;
}

MixingGap conditional_mixing_gap(const FiniteChain& chain, Index well, Index t) {
    check_well(chain, well);
    return conditional_mixing_gap(chain, well, chain.cores[static_cast<std::size_t>(well)], t);
}

namespace {

void check_distribution(const Vector& p, const char* name) {
    if (!all_finite(p) || (p.array() < 0.0).any()) throw ValidationError(std::string(name) + " has negative or non-finite mass");
    if (std::abs(p.sum() - 1.0) > 1e-9) throw ValidationError(std::string(name) + " does not sum to 1");
}

}  // namespace

double total_variation(const Vector& p0, const Vector& p1) {
    if (p0.size() != p1.size()) throw DimensionMismatch(p0.size(), p1.size(), "distribution support");
    return 0.5 * (p0 - p1).lpNorm<1>();
}

double bayes_risk(const Vector& p0, const Vector& p1) {
    if (p0.size() != p1.size()) throw DimensionMismatch(p0.size(), p1.size(), "distribution support");
    check_distribution(p0, "p0");
    check_distribution(p1, "p1");
    const double overlap = p0.cwiseMin(p1).sum();
    return overlap / (p0.sum() + p1.sum());
}

Index TheoremReport::violations() const {
    return static_cast<Index>(std::count_if(pairs.begin(), pairs.end(), [](const PairCheck& p) { return !p.holds; }));
}

json TheoremReport::to_json() const {
    json pj = json::array();
    for (const auto& p : pairs) {
        pj.push_back({{"x0", p.x0},
                      {"x1", p.x1},
                      {"same_well", p.same_well},
                      {"risk", p.risk},
                      {"bound", std::isfinite(p.bound) ? json(p.bound) : json(nullptr)},
                      {"holds", p.holds}});
    }
    return {{"t_star", t_star},
            {"T", T},
            {"delta", delta},
            {"epsilon", std::isfinite(epsilon) ? json(epsilon) : json(nullptr)},
            {"well_delta", well_delta},
            {"well_epsilon", well_epsilon},
            {"pairs", pj},
            {"violations", violations()},
            {"assumption_violations", assumption_violations}};
}

TheoremReport verify_theorem1(const FiniteChain& chain, Index t_star, Index T) {
    chain.validate();
    if (t_star < 0 || !(t_star < T)) throw ValidationError("need 0 <= t_star < T");
    constexpr double slack = 1e-12;
    TheoremReport r;
    r.t_star = t_star;
    r.T = T;
    const auto nw = static_cast<Index>(chain.wells.size());
    std::vector<bool> has_qsd(static_cast<std::size_t>(nw), true);
    for (Index w = 0; w < nw; ++w) {
        double d = 0.0;
        for (Index x : chain.cores[static_cast<std::size_t>(w)]) d = std::max(d, exit_probability(chain, x, w, T));
        r.well_delta.push_back(d);
        r.delta = std::max(r.delta, d);
        double eps = std::numeric_limits<double>::infinity();
        try {
            eps = conditional_mixing_gap(chain, w, t_star).epsilon;
        } catch (const NumericFailure& e) {
            has_qsd[static_cast<std::size_t>(w)] = false;
            r.assumption_violations.push_back(e.what());
        }
        r.well_epsilon.push_back(eps);
        r.epsilon = std::max(r.epsilon, eps);
    }
    if (std::isfinite(r.epsilon) && r.epsilon >= 0.5)
        r.assumption_violations.push_back("epsilon >= 1/2: the same-well bound is vacuous");

    Matrix Pt = Matrix::Identity(chain.size(), chain.size());
    for (Index s = 0; s < t_star; ++s) Pt = Pt * chain.P;

    std::vector<std::pair<Index, Index>> core_states;  // (state, well)
    for (Index w = 0; w < nw; ++w)
        for (Index x : chain.cores[static_cast<std::size_t>(w)]) core_states.emplace_back(x, w);
    for (std::size_t a = 0; a < core_states.size(); ++a) {
        for (std::size_t b = a + 1; b < core_states.size(); ++b) {
            const auto [x0, w0] = core_states[a];
            const auto [x1, w1] = core_states[b];
            PairCheck c;
            c.x0 = x0;
            c.x1 = x1;
            c.same_well = w0 == w1;
            c.risk = bayes_risk(Pt.row(x0).transpose(), Pt.row(x1).transpose());
            if (c.same_well) {
                if (has_qsd[static_cast<std::size_t>(w0)] && std::isfinite(r.epsilon)) {
                    c.bound = (1.0 - r.delta) * (0.5 - r.epsilon);
                    c.holds = c.risk >= c.bound - slack;
                } else {
                    c.bound = std::numeric_limits<double>::quiet_NaN();
                }
            } else {
                c.bound = r.delta;
                c.holds = c.risk <= c.bound + slack;
            }
            r.pairs.push_back(c);
        }
    }
    return r;
}

}  // namespace nbi
