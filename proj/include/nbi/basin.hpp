#pragma once

#include "nbi/nn.hpp"
#include "nbi/process.hpp"

#include "json.hpp"

#include <optional>
#include <vector>

namespace nbi {

/// Distribution of discovery starting points.
///   gaussian: mean + std * N(0, I); `mean` is ambient, or `mean_intrinsic`
///             (k-dim) is mapped through an embedding basis when one is given
///   sphere:   uniform on the unit sphere
struct InitDistribution {
    enum class Kind { gaussian, sphere };
    Kind kind = Kind::gaussian;
    Vector mean;  ///< empty = origin
    double std = 1.0;

    Vector sample(Index dim, Rng& rng) const;

    /// {"kind": "gaussian", "mean": [...] | "mean_intrinsic": [...], "std": s}
    /// or {"kind": "sphere"}. `basis` resolves "mean_intrinsic".
    static InitDistribution from_json(const nlohmann::json& j, const Matrix* basis = nullptr);
};

struct DiscoveryConfig {
    Index num_chains = 10;
    Index horizon = 1000;
    InitDistribution init;
};

/// Siamese architecture: trunk [D, trunk_hidden..., embedding_dim] and head
/// [embedding_dim, head_hidden..., 1].
struct NetworkConfig {
    std::vector<Index> trunk_hidden{128, 128};
    Index embedding_dim = 64;
    std::vector<Index> head_hidden{32};
};

struct NbiConfig {
    Index horizon = 1000;                   ///< t*
    Index trajectories_per_candidate = 64;  ///< n
    double merge_threshold = 0.3;           ///< gamma, merge iff risk > gamma
    DiscoveryConfig discovery;
    NetworkConfig network;
    TrainConfig train;
    Index train_pairs = 20000;          ///< total training pairs, half of each label
    Index eval_pairs_per_cell = 200;    ///< m: half cross, a quarter from each candidate
    double eval_fraction = 0.25;        ///< share of each candidate's trajectories held out
    Index indicate_trajectories = 1;    ///< j
    bool reestimate_after_merge = false;  ///< reserved; only single-pass merging is implemented

    void validate() const;
    static NbiConfig from_json(const nlohmann::json& j, const Matrix* basis = nullptr);
    nlohmann::json to_json() const;
};

struct CandidateSet {
    struct Provenance {
        std::uint64_t seed = 0;  ///< discovery seed
        Index trajectory = 0;    ///< discovery chain id
    };
    std::vector<Vector> states;
    std::vector<Provenance> provenance;

    Index size() const { return static_cast<Index>(states.size()); }
};

/// Runs `num_chains` chains from iid draws of the init distribution and keeps
/// their endpoints. Chain i draws its start and its steps from
/// trajectory_seed(seed, i). No deduplication.
CandidateSet discover_candidates(const MarkovKernel& kernel, const DiscoveryConfig& cfg, std::uint64_t seed,
                                 int workers = 0);

/// Endpoints of every candidate batch stacked as rows: row k * n + t is
/// trajectory t of candidate k.
struct PairDataset {
    RowMatrix endpoints;
    Index num_candidates = 0;
    Index per_candidate = 0;
    std::vector<std::vector<Index>> train_trajectories;  ///< per candidate
    std::vector<std::vector<Index>> eval_trajectories;   ///< per candidate, disjoint from train
    std::vector<PairSample> train;
    std::vector<RiskCell> eval;  ///< one cell per i < j, row-major order

    Index row(Index candidate, Index trajectory) const { return candidate * per_candidate + trajectory; }
};

struct PairRequest {
    Index train_pairs = 20000;
    Index eval_pairs_per_cell = 200;
    double eval_fraction = 0.25;
};

/// Splits each candidate's trajectories into train and eval sets, then draws
/// training pairs (half same, half different) from train trajectories and
/// distinct held-out pairs per cell from eval trajectories. Throws
/// ValidationError for K < 2 and InsufficientPairs when a cell cannot supply
/// m distinct pairs.
PairDataset build_pair_dataset(const std::vector<TrajectoryBatch>& batches, const PairRequest& request,
                               std::uint64_t seed);

struct MergedPair {
    Index i = 0;
    Index j = 0;
    double risk = 0.0;
};

/// Candidate -> basin labels from merging every pair with risk > gamma, closed
/// transitively. Basins are numbered by their smallest member index.
std::vector<Index> threshold_partition(const Matrix& risk, double gamma, std::vector<MergedPair>* merged = nullptr);

struct PartitionResult {
    std::vector<Index> labels;
    Index num_basins = 0;
    Matrix risk;
    std::vector<MergedPair> merged_pairs;
    MlpParams classifier;
    /// Held-out endpoints used by the indicator (rows) and their candidate ids.
    RowMatrix reference;
    std::vector<Index> reference_candidate;
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
};

/// Seed of candidate k's trajectory batch inside refine(..., seed).
inline std::uint64_t candidate_batch_seed(std::uint64_t refine_seed, Index k) {
    return derive_seed(derive_seed(refine_seed, 0), static_cast<std::uint64_t>(k));
}

/// Simulates n trajectories of t* steps from every candidate, trains one pair
/// classifier, estimates held-out risks and merges. K == 1 returns one basin
/// without training.
PartitionResult refine(const CandidateSet& candidates, const MarkovKernel& kernel, const NbiConfig& cfg,
                       std::uint64_t seed, int workers = 0);

/// Mean same-probability between each new endpoint set and each candidate's
/// stored endpoints, per candidate.
Vector candidate_scores(const PartitionResult& partition, const RowMatrix& endpoints);

/// Basin of `x`: simulate `trajectories` runs of `horizon` steps from x, score
/// each candidate, return the label of the argmax (lowest index on ties).
Index indicate(const PartitionResult& partition, const Vector& x, const MarkovKernel& kernel, Index horizon,
               Index trajectories, std::uint64_t seed);

}  // namespace nbi
