#pragma once

#include "nbi/basin.hpp"
#include "nbi/samplers.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nbi {

/// Analytic labelling rule for a landscape:
///   nearest-ring   double ring, by nearest shell radius
///   nearest-mean   mixtures, by nearest component mean
///   nearest-tube   helix, by nearest tube
///   overlap-sign   phase retrieval, 0 if x . x* >= 0 else 1
/// Embedded landscapes apply the base rule to the subspace projection.
using GroundTruth = std::function<Index(const Vector&)>;

/// Rule name implied by a kernel (the only one it accepts).
std::string ground_truth_rule(const KernelBundle& bundle);
GroundTruth make_ground_truth(const KernelBundle& bundle, const std::string& rule);

/// Optional pass/fail thresholds over the repeats of one manifest.
struct AcceptanceSpec {
    std::optional<double> min_mean_ari;
    std::optional<double> near_perfect_ari;  ///< with min_near_perfect: repeats with ARI >= this
    std::optional<Index> min_near_perfect;
    std::optional<Index> exact_basins;       ///< with min_exact_basins: repeats with exactly this many basins
    std::optional<Index> min_exact_basins;
    std::optional<std::pair<double, double>> mean_basins_range;

    bool empty() const;
};

struct Manifest {
    std::string name;
    nlohmann::json kernel;
    NbiConfig nbi;
    std::string ground_truth;
    Index num_repeats = 1;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    Index plot_trajectories = 2;  ///< trajectories per candidate kept for plotting
    Index plot_stride = 10;       ///< keep every k-th step of them
    AcceptanceSpec acceptance;
    nlohmann::json raw;  ///< the manifest as read, echoed into results
};

/// Parses and validates a manifest. A relative `output_dir` is resolved
/// against `base_dir`.
Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Manifest load_manifest(const std::filesystem::path& path);

struct RepeatRecord {
    Index repeat = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    Index num_candidates = 0;
    Index num_basins = 0;
    Index true_basins_discovered = 0;  ///< distinct ground-truth labels among candidates
    double ari = 0.0;                  ///< over candidate endpoints
    double nmi = 0.0;
    double candidate_ari = 0.0;        ///< over candidate states
    double candidate_nmi = 0.0;
    Index merged_pairs = 0;
    double final_train_loss = 0.0;
    double final_validation_loss = 0.0;

    nlohmann::json to_json() const;
};

struct Summary {
    double mean = 0.0;
    double std = 0.0;  ///< sample standard deviation; 0 for a single value
};
Summary summarize(const std::vector<double>& values);

struct AcceptanceOutcome {
    std::string criterion;
    bool passed = false;
    std::string detail;
};

struct RunResult {
    std::string name;
    std::vector<RepeatRecord> repeats;
    Summary ari, nmi, num_basins, candidate_ari;
    Index failed = 0;
    std::vector<AcceptanceOutcome> acceptance;

    bool accepted() const;
    nlohmann::json to_json(const Manifest& manifest) const;
};

/// Per-repeat outcome and the trained partition.
struct RepeatOutput {
    RepeatRecord record;
    CandidateSet candidates;
    PartitionResult partition;
};

/// One repeat with seed derive_seed(manifest.seed, repeat).
RepeatOutput run_repeat(const Manifest& manifest, const KernelBundle& bundle, Index repeat, int workers = 1);

struct RunOptions {
    std::optional<std::filesystem::path> output_dir;  ///< overrides the manifest
    int workers = 0;
    bool write_artifacts = true;
    bool verbose = false;
};

/// Runs every repeat, writes artifacts under the output directory and returns
/// the aggregate. Per-repeat errors are recorded, not thrown.
RunResult run_experiment(const Manifest& manifest, const RunOptions& options = {});

std::vector<AcceptanceOutcome> evaluate_acceptance(const AcceptanceSpec& spec, const std::vector<RepeatRecord>& repeats);

/// Plot table for every repeat directory under `run_dir`: writes
/// repeat_XX/plot.csv with columns
///   trajectory_id,candidate,step,c0..c{k-1},predicted,true
/// where c* are subspace coordinates for embedded landscapes and raw
/// coordinates otherwise. Returns the files written.
std::vector<std::filesystem::path> dump_plot(const std::filesystem::path& run_dir);

/// Partition saved by a run: kernel config, labels, classifier checkpoint and
/// reference endpoints, enough to assign new points.
struct SavedPartition {
    KernelBundle bundle;
    PartitionResult partition;
    Index horizon = 0;
    Index trajectories = 1;
    std::uint64_t seed = 0;
};
SavedPartition load_partition(const std::filesystem::path& partition_json);
void save_partition(const std::filesystem::path& dir, const Manifest& manifest, const RepeatOutput& out);

/// Reads points as CSV rows of numbers (an optional non-numeric header line is
/// skipped). Throws ValidationError naming the line on a bad row or a
/// dimension mismatch.
RowMatrix read_points_csv(std::istream& in, Index dim);

/// Basin of each row; point k uses derive_seed(saved.seed, k).
std::vector<Index> indicate_points(const SavedPartition& saved, const RowMatrix& points);

/// Writes `content` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace nbi
