#include "nbi/basin.hpp"

#include "nbi/samplers.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <numeric>

namespace nbi {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

Vector InitDistribution::sample(Index dim, Rng& rng) const {
    if (kind == Kind::sphere) return random_unit_vector(dim, rng);
    if (mean.size() != 0 && mean.size() != dim) throw DimensionMismatch(dim, mean.size(), "init mean");
    Vector x = rng.normal_vector(dim) * std;
    if (mean.size() != 0) x += mean;
    return x;
}

InitDistribution InitDistribution::from_json(const json& j, const Matrix* basis) {
    jsonutil::check_keys(j, {"kind", "mean", "mean_intrinsic", "std"}, "init");
    InitDistribution d;
    const std::string kind = j.value("kind", std::string("gaussian"));
    if (kind == "sphere") {
        d.kind = Kind::sphere;
        return d;
    }
    if (kind != "gaussian") throw ValidationError("unknown init kind '" + kind + "'");
    d.std = j.value("std", 1.0);
    if (!(d.std >= 0.0)) throw ValidationError("init std must be non-negative");
    if (j.contains("mean") && j.contains("mean_intrinsic"))
        throw ValidationError("init takes either mean or mean_intrinsic, not both");
    if (j.contains("mean")) d.mean = jsonutil::to_vector(j.at("mean"));
    if (j.contains("mean_intrinsic")) {
        const Vector m = jsonutil::to_vector(j.at("mean_intrinsic"));
        if (basis == nullptr) {
            d.mean = m;
        } else {
            if (m.size() != basis->cols()) throw DimensionMismatch(basis->cols(), m.size(), "init mean_intrinsic");
            d.mean = *basis * m;
        }
    }
    return d;
}

void NbiConfig::validate() const {
    if (horizon < 0) throw ValidationError("horizon must be non-negative");
    if (trajectories_per_candidate < 4) throw ValidationError("trajectories_per_candidate must be at least 4");
    if (!(merge_threshold > 0.0 && merge_threshold < 0.5)) throw ValidationError("merge_threshold must lie in (0, 0.5)");
    if (discovery.num_chains < 1) throw ValidationError("discovery.num_chains must be at least 1");
    if (discovery.horizon < 0) throw ValidationError("discovery.horizon must be non-negative");
    if (network.embedding_dim < 1) throw ValidationError("network.embedding_dim must be positive");
    if (train.epochs < 0 || train.batch_size < 1) throw ValidationError("bad train epochs or batch_size");
    if (!(train.adam.learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
    if (!(train.validation_fraction > 0.0 && train.validation_fraction < 1.0))
        throw ValidationError("train.validation_fraction must lie in (0, 1)");
    if (train_pairs < 2) throw ValidationError("train_pairs must be at least 2");
    if (eval_pairs_per_cell < 4) throw ValidationError("eval_pairs_per_cell must be at least 4");
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ValidationError("eval_fraction must lie in (0, 1)");
    if (indicate_trajectories < 1) throw ValidationError("indicate_trajectories must be at least 1");
    if (reestimate_after_merge) throw ValidationError("reestimate_after_merge is reserved and not supported");
}

NbiConfig NbiConfig::from_json(const json& j, const Matrix* basis) {
    jsonutil::check_keys(j,
                         {"horizon", "trajectories_per_candidate", "merge_threshold", "discovery", "network", "train",
                          "train_pairs", "eval_pairs_per_cell", "eval_fraction", "indicate_trajectories",
                          "reestimate_after_merge"},
                         "nbi config");
    NbiConfig c;
    c.horizon = j.value("horizon", c.horizon);
    c.trajectories_per_candidate = j.value("trajectories_per_candidate", c.trajectories_per_candidate);
    c.merge_threshold = j.value("merge_threshold", c.merge_threshold);
    c.train_pairs = j.value("train_pairs", c.train_pairs);
    c.eval_pairs_per_cell = j.value("eval_pairs_per_cell", c.eval_pairs_per_cell);
    c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
    c.indicate_trajectories = j.value("indicate_trajectories", c.indicate_trajectories);
    c.reestimate_after_merge = j.value("reestimate_after_merge", c.reestimate_after_merge);
    if (j.contains("discovery")) {
        const json& d = j.at("discovery");
        jsonutil::check_keys(d, {"num_chains", "horizon", "init"}, "discovery");
        c.discovery.num_chains = d.value("num_chains", c.discovery.num_chains);
        c.discovery.horizon = d.value("horizon", c.discovery.horizon);
        if (d.contains("init")) c.discovery.init = InitDistribution::from_json(d.at("init"), basis);
    }
    if (j.contains("network")) {
        const json& n = j.at("network");
        jsonutil::check_keys(n, {"trunk_hidden", "embedding_dim", "head_hidden"}, "network");
        c.network.trunk_hidden = n.value("trunk_hidden", c.network.trunk_hidden);
        c.network.embedding_dim = n.value("embedding_dim", c.network.embedding_dim);
        c.network.head_hidden = n.value("head_hidden", c.network.head_hidden);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        jsonutil::check_keys(t, {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon",
                                 "validation_fraction"},
                             "train");
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.adam.learning_rate = t.value("learning_rate", c.train.adam.learning_rate);
        c.train.adam.beta1 = t.value("beta1", c.train.adam.beta1);
        c.train.adam.beta2 = t.value("beta2", c.train.adam.beta2);
        c.train.adam.epsilon = t.value("epsilon", c.train.adam.epsilon);
        c.train.validation_fraction = t.value("validation_fraction", c.train.validation_fraction);
    }
    c.validate();
    return c;
}

json NbiConfig::to_json() const {
    json init;
    if (discovery.init.kind == InitDistribution::Kind::sphere) {
        init = {{"kind", "sphere"}};
    } else {
        init = {{"kind", "gaussian"}, {"std", discovery.init.std}};
        if (discovery.init.mean.size() != 0) init["mean"] = jsonutil::from_vector(discovery.init.mean);
    }
    return {
        {"horizon", horizon},
        {"trajectories_per_candidate", trajectories_per_candidate},
        {"merge_threshold", merge_threshold},
        {"discovery", {{"num_chains", discovery.num_chains}, {"horizon", discovery.horizon}, {"init", init}}},
        {"network",
         {{"trunk_hidden", network.trunk_hidden},
          {"embedding_dim", network.embedding_dim},
          {"head_hidden", network.head_hidden}}},
        {"train",
         {{"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"learning_rate", train.adam.learning_rate},
          {"beta1", train.adam.beta1},
          {"beta2", train.adam.beta2},
          {"epsilon", train.adam.epsilon},
          {"validation_fraction", train.validation_fraction}}},
        {"train_pairs", train_pairs},
        {"eval_pairs_per_cell", eval_pairs_per_cell},
        {"eval_fraction", eval_fraction},
        {"indicate_trajectories", indicate_trajectories},
        {"reestimate_after_merge", reestimate_after_merge},
    };
}

// ---------------------------------------------------------------------------
// Discovery

CandidateSet discover_candidates(const MarkovKernel& kernel, const DiscoveryConfig& cfg, std::uint64_t seed,
                                 int workers) {
    if (cfg.num_chains < 1) throw ValidationError("num_chains must be at least 1");
    if (cfg.horizon < 0) throw ValidationError("discovery horizon must be non-negative");
    const Index dim = kernel.dimension();
    CandidateSet out;
    out.states.resize(static_cast<std::size_t>(cfg.num_chains));
    out.provenance.resize(static_cast<std::size_t>(cfg.num_chains));
    parallel_for(cfg.num_chains, workers, [&](Index i) {
        Rng rng(trajectory_seed(seed, i));
        Vector x = cfg.init.sample(dim, rng);
        try {
            advance(kernel, x, cfg.horizon, rng);
        } catch (const SimulationDiverged& e) {
            throw SimulationDiverged(e.step, i, "discovery chain");
        }
        out.states[static_cast<std::size_t>(i)] = std::move(x);
        out.provenance[static_cast<std::size_t>(i)] = {seed, i};
    });
    return out;
}

// ---------------------------------------------------------------------------
// Pair dataset

namespace {

/// `k` distinct indices from [0, n), by partial Fisher-Yates.
std::vector<Index> sample_distinct(Index n, Index k, Rng& rng) {
    std::vector<Index> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), Index{0});
    for (Index i = 0; i < k; ++i) std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(i + rng.below(n - i))]);
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

/// Unordered pair number `c` of {0..n-1}, enumerated (0,1), (0,2), ..., (1,2), ...
std::pair<Index, Index> unordered_pair(Index c, Index n) {
    Index a = 0;
    while (c >= n - 1 - a) {
        c -= n - 1 - a;
        ++a;
    }
    return {a, a + 1 + c};
}

}  // namespace

PairDataset build_pair_dataset(const std::vector<TrajectoryBatch>& batches, const PairRequest& request,
                               std::uint64_t seed) {
    const auto K = static_cast<Index>(batches.size());
    if (K < 2) throw ValidationError("need K >= 2 for cross pairs");
    if (request.train_pairs < 2) throw ValidationError("train_pairs must be at least 2");
    if (request.eval_pairs_per_cell < 4) throw ValidationError("eval_pairs_per_cell must be at least 4");
    if (!(request.eval_fraction > 0.0 && request.eval_fraction < 1.0))
        throw ValidationError("eval_fraction must lie in (0, 1)");
    const Index n = batches.front().count;
    const Index dim = batches.front().dimension();
    for (const auto& b : batches) {
        if (b.count != n) throw ValidationError("every candidate needs the same number of trajectories");
        if (b.dimension() != dim) throw DimensionMismatch(dim, b.dimension(), "candidate batch");
    }
    const auto n_eval = static_cast<Index>(std::llround(request.eval_fraction * static_cast<double>(n)));
    if (n_eval < 2 || n - n_eval < 2)
        throw ValidationError("n = " + std::to_string(n) + " is too small to hold out two trajectories per side");

    PairDataset ds;
    ds.num_candidates = K;
    ds.per_candidate = n;
    ds.endpoints.resize(K * n, dim);
    for (Index k = 0; k < K; ++k) ds.endpoints.middleRows(k * n, n) = batches[static_cast<std::size_t>(k)].endpoints();

    Rng rng(derive_seed(seed, 0));
    for (Index k = 0; k < K; ++k) {
        std::vector<Index> perm = sample_distinct(n, n, rng);
        std::vector<Index> eval(perm.begin(), perm.begin() + n_eval);
        std::vector<Index> tr(perm.begin() + n_eval, perm.end());
        std::sort(eval.begin(), eval.end());
        std::sort(tr.begin(), tr.end());
        ds.eval_trajectories.push_back(std::move(eval));
        ds.train_trajectories.push_back(std::move(tr));
    }

    // Training pairs: same pairs cycle through candidates, different pairs
    // draw an ordered candidate pair uniformly.
    const Index n_same = request.train_pairs / 2;
    const Index n_diff = request.train_pairs - n_same;
    ds.train.reserve(static_cast<std::size_t>(request.train_pairs));
    for (Index s = 0; s < n_same; ++s) {
        const Index k = s % K;
        const auto& tr = ds.train_trajectories[static_cast<std::size_t>(k)];
        const auto picks = sample_distinct(static_cast<Index>(tr.size()), 2, rng);
        ds.train.push_back({ds.row(k, tr[static_cast<std::size_t>(picks[0])]), ds.row(k, tr[static_cast<std::size_t>(picks[1])]),
                            PairLabel::same, k, k});
    }
    for (Index s = 0; s < n_diff; ++s) {
        const Index i = rng.below(K);
        Index j = rng.below(K - 1);
        if (j >= i) ++j;
        const auto& ti = ds.train_trajectories[static_cast<std::size_t>(i)];
        const auto& tj = ds.train_trajectories[static_cast<std::size_t>(j)];
        const Index a = ti[static_cast<std::size_t>(rng.below(static_cast<Index>(ti.size())))];
        const Index b = tj[static_cast<std::size_t>(rng.below(static_cast<Index>(tj.size())))];
        ds.train.push_back({ds.row(i, a), ds.row(j, b), PairLabel::different, i, j});
    }

    // Held-out cells: m/2 cross pairs, the rest split between i-i and j-j.
    const Index m = request.eval_pairs_per_cell;
    const Index n_cross = m / 2;
    const Index n_ii = (m - n_cross) / 2;
    const Index n_jj = m - n_cross - n_ii;
    const Index cross_avail = n_eval * n_eval;
    const Index same_avail = n_eval * (n_eval - 1) / 2;
    if (cross_avail < n_cross || same_avail < n_jj) {
        const Index have = std::min({2 * cross_avail, 4 * same_avail});
        throw InsufficientPairs(0, 1, have, m);
    }
    Index cell = 0;
    for (Index i = 0; i < K; ++i) {
        for (Index j = i + 1; j < K; ++j, ++cell) {
            Rng cell_rng(derive_seed(seed, static_cast<std::uint64_t>(cell) + 1));
            const auto& ei = ds.eval_trajectories[static_cast<std::size_t>(i)];
            const auto& ej = ds.eval_trajectories[static_cast<std::size_t>(j)];
            RiskCell rc{i, j, {}};
            rc.pairs.reserve(static_cast<std::size_t>(m));
            for (Index c : sample_distinct(cross_avail, n_cross, cell_rng)) {
                rc.pairs.push_back({ds.row(i, ei[static_cast<std::size_t>(c / n_eval)]),
                                    ds.row(j, ej[static_cast<std::size_t>(c % n_eval)]), PairLabel::different, i, j});
            }
            for (auto [k, count] : {std::pair{i, n_ii}, std::pair{j, n_jj}}) {
                const auto& ek = ds.eval_trajectories[static_cast<std::size_t>(k)];
                for (Index c : sample_distinct(same_avail, count, cell_rng)) {
                    const auto [a, b] = unordered_pair(c, n_eval);
                    rc.pairs.push_back({ds.row(k, ek[static_cast<std::size_t>(a)]), ds.row(k, ek[static_cast<std::size_t>(b)]),
                                        PairLabel::same, k, k});
                }
            }
            ds.eval.push_back(std::move(rc));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Merging

namespace {

class DisjointSets {
public:
    explicit DisjointSets(Index n) : parent_(static_cast<std::size_t>(n)) {
        std::iota(parent_.begin(), parent_.end(), Index{0});
    }
    Index find(Index x) {
        while (parent_[static_cast<std::size_t>(x)] != x) {
            auto& p = parent_[static_cast<std::size_t>(x)];
            p = parent_[static_cast<std::size_t>(p)];
            x = p;
        }
        return x;
    }
    void unite(Index a, Index b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }

private:
    std::vector<Index> parent_;
};

}  // namespace

std::vector<Index> threshold_partition(const Matrix& risk, double gamma, std::vector<MergedPair>* merged) {
    if (risk.rows() != risk.cols()) throw ValidationError("risk matrix must be square");
    const Index K = risk.rows();
    DisjointSets sets(K);
    if (merged) merged->clear();
    for (Index i = 0; i < K; ++i) {
        for (Index j = i + 1; j < K; ++j) {
            if (risk(i, j) > gamma) {
                sets.unite(i, j);
                if (merged) merged->push_back({i, j, risk(i, j)});
            }
        }
    }
    std::vector<Index> root_label(static_cast<std::size_t>(K), -1);
    std::vector<Index> labels(static_cast<std::size_t>(K));
    Index next = 0;
    for (Index k = 0; k < K; ++k) {
        Index& l = root_label[static_cast<std::size_t>(sets.find(k))];
        if (l < 0) l = next++;
        labels[static_cast<std::size_t>(k)] = l;
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Refinement and indicator

PartitionResult refine(const CandidateSet& candidates, const MarkovKernel& kernel, const NbiConfig& cfg,
                       std::uint64_t seed, int workers) {
    cfg.validate();
    const Index K = candidates.size();
    if (K < 1) throw ValidationError("refinement needs at least one candidate");
    for (const auto& s : candidates.states) {
        if (s.size() != kernel.dimension()) throw DimensionMismatch(kernel.dimension(), s.size(), "candidate state");
        if (!all_finite(s)) throw ValidationError("candidate state has non-finite entries");
    }

    PartitionResult out;
    if (K == 1) {
        out.labels = {0};
        out.num_basins = 1;
        out.risk = Matrix::Zero(1, 1);
        return out;
    }

    std::vector<TrajectoryBatch> batches;
    batches.reserve(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) {
        batches.push_back(simulate_batch(kernel, candidates.states[static_cast<std::size_t>(k)], cfg.horizon,
                                         cfg.trajectories_per_candidate, candidate_batch_seed(seed, k),
                                         StoreMode::endpoints, workers));
    }

    const PairDataset ds = build_pair_dataset(
        batches, PairRequest{cfg.train_pairs, cfg.eval_pairs_per_cell, cfg.eval_fraction}, derive_seed(seed, 1));

    MlpParams params = init_siamese(kernel.dimension(), cfg.network.trunk_hidden, cfg.network.embedding_dim,
                                    cfg.network.head_hidden, derive_seed(seed, 2));
    std::vector<Index> train_rows;
    for (Index k = 0; k < K; ++k)
        for (Index t : ds.train_trajectories[static_cast<std::size_t>(k)]) train_rows.push_back(ds.row(k, t));
    fit_input_standardization(params, gather_columns(ds.endpoints, train_rows).transpose());

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed, 3);
    TrainResult trained = train(std::move(params), ds.endpoints, ds.train, tc);
    if (!trained.ok()) throw NumericFailure("classifier training failed: " + trained.failure);

    out.risk = estimate_pair_risk(trained.params, ds.endpoints, ds.eval, K, cfg.eval_pairs_per_cell);
    out.labels = threshold_partition(out.risk, cfg.merge_threshold, &out.merged_pairs);
    out.num_basins = *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    out.classifier = std::move(trained.params);
    out.train_loss = std::move(trained.train_loss);
    out.validation_loss = std::move(trained.validation_loss);
    // Held-out endpoints serve as the indicator's reference set.
    std::vector<Index> ref_rows;
    for (Index k = 0; k < K; ++k) {
        for (Index t : ds.eval_trajectories[static_cast<std::size_t>(k)]) {
            ref_rows.push_back(ds.row(k, t));
            out.reference_candidate.push_back(k);
        }
    }
    out.reference = gather_columns(ds.endpoints, ref_rows).transpose();
    return out;
}

Vector candidate_scores(const PartitionResult& partition, const RowMatrix& endpoints) {
    const Index K = static_cast<Index>(partition.labels.size());
    if (partition.classifier.empty()) throw ValidationError("partition has no trained classifier");
    if (endpoints.cols() != partition.classifier.input_dim())
        throw DimensionMismatch(partition.classifier.input_dim(), endpoints.cols(), "indicator endpoints");
    if (static_cast<Index>(partition.reference_candidate.size()) != partition.reference.rows())
        throw ValidationError("reference endpoints and candidate ids disagree");

    const Matrix ref_emb = trunk_forward(partition.classifier, partition.reference.transpose());
    const Matrix new_emb = trunk_forward(partition.classifier, endpoints.transpose());
    Vector total = Vector::Zero(K);
    Vector count = Vector::Zero(K);
    for (Index e = 0; e < new_emb.cols(); ++e) {
        const Matrix diff = (ref_emb.colwise() - new_emb.col(e)).cwiseAbs();
        const Vector z = head_logits(partition.classifier, diff);
        if (!all_finite(z)) throw NumericFailure("non-finite classifier logit");
        for (Index r = 0; r < z.size(); ++r) {
            const Index c = partition.reference_candidate[static_cast<std::size_t>(r)];
            total(c) += 1.0 / (1.0 + std::exp(-z(r)));
            count(c) += 1.0;
        }
    }
    return (total.array() / count.array().max(1.0)).matrix();
}

Index indicate(const PartitionResult& partition, const Vector& x, const MarkovKernel& kernel, Index horizon,
               Index trajectories, std::uint64_t seed) {
    if (partition.labels.size() == 1) return 0;
    if (x.size() != kernel.dimension()) throw DimensionMismatch(kernel.dimension(), x.size(), "indicator state");
    if (trajectories < 1) throw ValidationError("indicator needs at least one trajectory");
    RowMatrix ends(trajectories, x.size());
    for (Index c = 0; c < trajectories; ++c) {
        Rng rng(trajectory_seed(seed, c));
        Vector y = x;
        advance(kernel, y, horizon, rng);
        ends.row(c) = y.transpose();
    }
    const Vector scores = candidate_scores(partition, ends);
    Index best = 0;
    for (Index k = 1; k < scores.size(); ++k)
        if (scores(k) > scores(best)) best = k;
    return partition.labels[static_cast<std::size_t>(best)];
}

}  // namespace nbi
