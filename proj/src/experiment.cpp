#include "nbi/experiment.hpp"

#include "nbi/metrics.hpp"

#include "byte_io.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace nbi {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Ground truth

std::string ground_truth_rule(const KernelBundle& bundle) {
    if (bundle.phase_retrieval) return "overlap-sign";
    if (!bundle.energy) throw ValidationError("kernel has no analytic ground truth");
    const EnergySpec* e = &bundle.energy;
    if (e->kind() == EnergyKind::augmented_embedding) e = e->base();
    switch (e->kind()) {
        case EnergyKind::double_ring: return "nearest-ring";
        case EnergyKind::gaussian_mixture_2d:
        case EnergyKind::isotropic_gmm: return "nearest-mean";
        case EnergyKind::helix_3d: return "nearest-tube";
        default: break;
    }
    throw ValidationError("landscape '" + to_string(e->kind()) + "' has no analytic ground truth");
}

GroundTruth make_ground_truth(const KernelBundle& bundle, const std::string& rule) {
    const std::string expected = ground_truth_rule(bundle);
    if (rule != expected)
        throw ValidationError("ground truth rule '" + rule + "' does not fit this kernel (expected '" + expected + "')");
    if (bundle.phase_retrieval) {
        const Vector truth = bundle.phase_retrieval->truth;
        return [truth](const Vector& x) -> Index { return x.dot(truth) >= 0.0 ? 0 : 1; };
    }
    const EnergySpec energy = bundle.energy;
    return [energy](const Vector& x) { return energy.basin_of(x); };
}

// ---------------------------------------------------------------------------
// Manifest

bool AcceptanceSpec::empty() const {
    return !min_mean_ari && !near_perfect_ari && !exact_basins && !mean_basins_range;
}

namespace {

AcceptanceSpec acceptance_from_json(const json& j) {
    jsonutil::check_keys(j, {"min_mean_ari", "near_perfect_ari", "min_near_perfect", "exact_basins", "min_exact_basins",
                             "mean_basins_range"},
                         "acceptance");
    AcceptanceSpec a;
    if (j.contains("min_mean_ari")) a.min_mean_ari = j.at("min_mean_ari").get<double>();
    if (j.contains("near_perfect_ari") != j.contains("min_near_perfect"))
        throw ValidationError("near_perfect_ari and min_near_perfect go together");
    if (j.contains("near_perfect_ari")) {
        a.near_perfect_ari = j.at("near_perfect_ari").get<double>();
        a.min_near_perfect = j.at("min_near_perfect").get<Index>();
    }
    if (j.contains("exact_basins") != j.contains("min_exact_basins"))
        throw ValidationError("exact_basins and min_exact_basins go together");
    if (j.contains("exact_basins")) {
        a.exact_basins = j.at("exact_basins").get<Index>();
        a.min_exact_basins = j.at("min_exact_basins").get<Index>();
    }
    if (j.contains("mean_basins_range")) {
        const auto r = j.at("mean_basins_range").get<std::vector<double>>();
        if (r.size() != 2 || r[0] > r[1]) throw ValidationError("mean_basins_range must be [lo, hi]");
        a.mean_basins_range = std::pair{r[0], r[1]};
    }
    return a;
}

}  // namespace

Manifest manifest_from_json(const json& j, const fs::path& base_dir) {
    jsonutil::check_keys(j,
                         {"name", "description", "kernel", "nbi", "ground_truth", "num_repeats", "seed", "output_dir",
                          "plot", "acceptance"},
                         "manifest");
    Manifest m;
    m.raw = j;
    m.name = j.at("name").get<std::string>();
    if (m.name.empty()) throw ValidationError("manifest name must be non-empty");
    m.kernel = j.at("kernel");
    const KernelBundle bundle = make_kernel(m.kernel);
    const EmbeddingSpec* emb = bundle.energy ? bundle.energy.embedding() : nullptr;
    m.nbi = NbiConfig::from_json(j.value("nbi", json::object()), emb ? &emb->basis : nullptr);
    m.ground_truth = j.value("ground_truth", ground_truth_rule(bundle));
    make_ground_truth(bundle, m.ground_truth);
    m.num_repeats = j.value("num_repeats", Index{1});
    if (m.num_repeats < 1) throw ValidationError("num_repeats must be at least 1");
    m.seed = j.value("seed", std::uint64_t{0});
    m.output_dir = j.value("output_dir", "runs/" + m.name);
    if (m.output_dir.is_relative() && !base_dir.empty()) m.output_dir = base_dir / m.output_dir;
    if (j.contains("plot")) {
        const json& p = j.at("plot");
        jsonutil::check_keys(p, {"trajectories", "stride"}, "plot");
        m.plot_trajectories = p.value("trajectories", m.plot_trajectories);
        m.plot_stride = p.value("stride", m.plot_stride);
        if (m.plot_trajectories < 0 || m.plot_stride < 1) throw ValidationError("bad plot settings");
    }
    if (j.contains("acceptance")) m.acceptance = acceptance_from_json(j.at("acceptance"));
    return m;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j, fs::current_path());
}

// ---------------------------------------------------------------------------
// Records

json RepeatRecord::to_json() const {
    json j = {{"repeat", repeat}, {"seed", seed}, {"ok", ok}};
    if (!ok) {
        j["error"] = error;
        return j;
    }
    j["num_candidates"] = num_candidates;
    j["num_basins"] = num_basins;
    j["true_basins_discovered"] = true_basins_discovered;
    j["ari"] = ari;
    j["nmi"] = nmi;
    j["candidate_ari"] = candidate_ari;
    j["candidate_nmi"] = candidate_nmi;
    j["merged_pairs"] = merged_pairs;
    j["final_train_loss"] = final_train_loss;
    j["final_validation_loss"] = final_validation_loss;
    return j;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) return s;
    double total = 0.0;
    for (double v : values) total += v;
    s.mean = total / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

bool RunResult::accepted() const {
    return std::all_of(acceptance.begin(), acceptance.end(), [](const AcceptanceOutcome& a) { return a.passed; });
}

json RunResult::to_json(const Manifest& manifest) const {
    json reps = json::array();
    for (const auto& r : repeats) reps.push_back(r.to_json());
    auto summary = [](const Summary& s) { return json{{"mean", s.mean}, {"std", s.std}}; };
    json acc = json::array();
    for (const auto& a : acceptance) acc.push_back({{"criterion", a.criterion}, {"passed", a.passed}, {"detail", a.detail}});
    return {{"format", "nbi-results"},
            {"version", 1},
            {"name", name},
            {"manifest", manifest.raw},
            {"repeats", reps},
            {"aggregate",
             {{"completed", static_cast<Index>(repeats.size()) - failed},
              {"failed", failed},
              {"ari", summary(ari)},
              {"nmi", summary(nmi)},
              {"num_basins", summary(num_basins)},
              {"candidate_ari", summary(candidate_ari)}}},
            {"acceptance", acc}};
}

std::vector<AcceptanceOutcome> evaluate_acceptance(const AcceptanceSpec& spec, const std::vector<RepeatRecord>& repeats) {
    std::vector<AcceptanceOutcome> out;
    std::vector<double> aris, basins;
    Index failed = 0;
    for (const auto& r : repeats) {
        if (!r.ok) {
            ++failed;
            continue;
        }
        aris.push_back(r.ari);
        basins.push_back(static_cast<double>(r.num_basins));
    }
    const std::string failures = failed ? " (" + std::to_string(failed) + " repeat(s) failed)" : "";
    auto fmt = [](double v) {
        std::ostringstream s;
        s << std::setprecision(4) << v;
        return s.str();
    };
    if (spec.min_mean_ari) {
        const double mean = summarize(aris).mean;
        out.push_back({"mean ARI >= " + fmt(*spec.min_mean_ari), failed == 0 && mean >= *spec.min_mean_ari,
                       "mean ARI " + fmt(mean) + failures});
    }
    if (spec.near_perfect_ari) {
        const auto count = std::count_if(aris.begin(), aris.end(), [&](double a) { return a >= *spec.near_perfect_ari; });
        out.push_back({"repeats with ARI >= " + fmt(*spec.near_perfect_ari) + " at least " + std::to_string(*spec.min_near_perfect),
                       count >= *spec.min_near_perfect,
                       std::to_string(count) + " of " + std::to_string(repeats.size()) + failures});
    }
    if (spec.exact_basins) {
        const auto count = std::count(basins.begin(), basins.end(), static_cast<double>(*spec.exact_basins));
        out.push_back({"repeats with exactly " + std::to_string(*spec.exact_basins) + " basins at least " +
                           std::to_string(*spec.min_exact_basins),
                       count >= *spec.min_exact_basins,
                       std::to_string(count) + " of " + std::to_string(repeats.size()) + failures});
    }
    if (spec.mean_basins_range) {
        const auto [lo, hi] = *spec.mean_basins_range;
        const double mean = summarize(basins).mean;
        out.push_back({"mean basins in [" + fmt(lo) + ", " + fmt(hi) + "]", failed == 0 && mean >= lo && mean <= hi,
                       "mean basins " + fmt(mean) + failures});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Running

namespace {

Index distinct(const std::vector<Index>& v) { return static_cast<Index>(std::set<Index>(v.begin(), v.end()).size()); }

fs::path repeat_dir(const fs::path& root, Index r) {
    std::ostringstream s;
    s << "repeat_" << std::setw(2) << std::setfill('0') << r;
    return root / s.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("missing artifact " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

RepeatOutput run_repeat(const Manifest& manifest, const KernelBundle& bundle, Index repeat, int workers) {
    RepeatOutput out;
    RepeatRecord& rec = out.record;
    rec.repeat = repeat;
    rec.seed = derive_seed(manifest.seed, static_cast<std::uint64_t>(repeat));
    const GroundTruth truth = make_ground_truth(bundle, manifest.ground_truth);

    out.candidates = discover_candidates(*bundle.kernel, manifest.nbi.discovery, derive_seed(rec.seed, 0), workers);
    out.partition = refine(out.candidates, *bundle.kernel, manifest.nbi, derive_seed(rec.seed, 1), workers);
    const PartitionResult& part = out.partition;

    std::vector<Index> cand_truth;
    for (const auto& s : out.candidates.states) cand_truth.push_back(truth(s));
    rec.num_candidates = out.candidates.size();
    rec.num_basins = part.num_basins;
    rec.true_basins_discovered = distinct(cand_truth);
    rec.candidate_ari = ari(part.labels, cand_truth);
    rec.candidate_nmi = nmi(part.labels, cand_truth);
    if (part.reference.rows() > 0) {
        std::vector<Index> pred, tru;
        for (Index r = 0; r < part.reference.rows(); ++r) {
            pred.push_back(part.labels[static_cast<std::size_t>(part.reference_candidate[static_cast<std::size_t>(r)])]);
            tru.push_back(truth(part.reference.row(r).transpose()));
        }
        rec.ari = ari(pred, tru);
        rec.nmi = nmi(pred, tru);
    } else {
        rec.ari = rec.candidate_ari;
        rec.nmi = rec.candidate_nmi;
    }
    rec.merged_pairs = static_cast<Index>(part.merged_pairs.size());
    if (!part.train_loss.empty()) rec.final_train_loss = part.train_loss.back();
    if (!part.validation_loss.empty()) rec.final_validation_loss = part.validation_loss.back();
    rec.ok = true;
    return out;
}

namespace {

void write_repeat_artifacts(const fs::path& dir, const Manifest& manifest, const KernelBundle& bundle,
                            const RepeatOutput& out) {
    fs::create_directories(dir);
    const GroundTruth truth = make_ground_truth(bundle, manifest.ground_truth);
    const auto& part = out.partition;

    std::ostringstream labels;
    labels << "candidate,predicted,true,discovery_chain\n";
    for (Index k = 0; k < out.candidates.size(); ++k) {
        labels << k << ',' << part.labels[static_cast<std::size_t>(k)] << ',' << truth(out.candidates.states[static_cast<std::size_t>(k)])
               << ',' << out.candidates.provenance[static_cast<std::size_t>(k)].trajectory << '\n';
    }
    write_file_atomic(dir / "labels.csv", labels.str());

    std::ostringstream ends;
    ends << "row,candidate,predicted,true\n";
    for (Index r = 0; r < part.reference.rows(); ++r) {
        const Index c = part.reference_candidate[static_cast<std::size_t>(r)];
        ends << r << ',' << c << ',' << part.labels[static_cast<std::size_t>(c)] << ','
             << truth(part.reference.row(r).transpose()) << '\n';
    }
    write_file_atomic(dir / "endpoints.csv", ends.str());

    // Plot trajectories replay the first refinement trajectories of each
    // candidate: same batch seeds, full storage, thinned.
    std::ostringstream traj;
    traj << "trajectory_id,candidate,step";
    for (Index d = 0; d < bundle.kernel->dimension(); ++d) traj << ",x" << d;
    traj << '\n';
    const std::uint64_t refine_seed = derive_seed(out.record.seed, 1);
    const Index per = std::min(manifest.plot_trajectories, manifest.nbi.trajectories_per_candidate);
    Index id = 0;
    for (Index k = 0; k < out.candidates.size() && per > 0; ++k) {
        const TrajectoryBatch b =
            simulate_batch(*bundle.kernel, out.candidates.states[static_cast<std::size_t>(k)], manifest.nbi.horizon, per,
                           candidate_batch_seed(refine_seed, k), StoreMode::full, 1);
        for (Index i = 0; i < per; ++i, ++id) {
            for (Index t = 0; t <= b.horizon; ++t) {
                if (t % manifest.plot_stride != 0 && t != b.horizon) continue;
                traj << id << ',' << k << ',' << t;
                const auto row = b.state(i, t);
                for (Index d = 0; d < row.size(); ++d) traj << ',' << io::format_double(row(d));
                traj << '\n';
            }
        }
    }
    write_file_atomic(dir / "trajectories.csv", traj.str());
    save_partition(dir, manifest, out);
}

}  // namespace

RunResult run_experiment(const Manifest& manifest, const RunOptions& options) {
    const fs::path out_dir = options.output_dir.value_or(manifest.output_dir);
    const KernelBundle bundle = make_kernel(manifest.kernel);
    RunResult result;
    result.name = manifest.name;
    result.repeats.resize(static_cast<std::size_t>(manifest.num_repeats));

    std::mutex log_mu;
    parallel_for(manifest.num_repeats, options.workers, [&](Index r) {
        const auto start = std::chrono::steady_clock::now();
        RepeatRecord& rec = result.repeats[static_cast<std::size_t>(r)];
        try {
            RepeatOutput out = run_repeat(manifest, bundle, r, 1);
            if (options.write_artifacts) write_repeat_artifacts(repeat_dir(out_dir, r), manifest, bundle, out);
            rec = std::move(out.record);
        } catch (const std::exception& e) {
            rec = RepeatRecord{};
            rec.repeat = r;
            rec.seed = derive_seed(manifest.seed, static_cast<std::uint64_t>(r));
            rec.ok = false;
            rec.error = e.what();
        }
        if (options.verbose) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::lock_guard lock(log_mu);
            std::cerr << manifest.name << " repeat " << r << ": ";
            if (rec.ok)
                std::cerr << "K=" << rec.num_candidates << " basins=" << rec.num_basins << " ARI=" << rec.ari
                          << " NMI=" << rec.nmi;
            else
                std::cerr << "FAILED " << rec.error;
            std::cerr << " (" << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat << '\n';
        }
    });

    std::vector<double> aris, nmis, basins, cand_aris;
    for (const auto& r : result.repeats) {
        if (!r.ok) {
            ++result.failed;
            continue;
        }
        aris.push_back(r.ari);
        nmis.push_back(r.nmi);
        basins.push_back(static_cast<double>(r.num_basins));
        cand_aris.push_back(r.candidate_ari);
    }
    result.ari = summarize(aris);
    result.nmi = summarize(nmis);
    result.num_basins = summarize(basins);
    result.candidate_ari = summarize(cand_aris);
    result.acceptance = evaluate_acceptance(manifest.acceptance, result.repeats);
    if (options.write_artifacts) write_file_atomic(out_dir / "results.json", result.to_json(manifest).dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Saved partitions

namespace {

constexpr char kRefMagic[8] = {'N', 'B', 'I', 'R', 'E', 'F', '\0', '\0'};

void write_reference(const PartitionResult& p, std::ostream& out) {
    out.write(kRefMagic, sizeof kRefMagic);
    io::put_u32(out, 1);
    io::put_u64(out, static_cast<std::uint64_t>(p.reference.rows()));
    io::put_u64(out, static_cast<std::uint64_t>(p.reference.cols()));
    for (Index c : p.reference_candidate) io::put_u64(out, static_cast<std::uint64_t>(c));
    io::put_f64s(out, p.reference.data(), p.reference.size());
}

void read_reference(PartitionResult& p, std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kRefMagic)) throw ValidationError("not a reference endpoint file");
    if (io::get_u32(in) != 1) throw ValidationError("unsupported reference endpoint version");
    const auto rows = static_cast<Index>(io::get_u64(in));
    const auto cols = static_cast<Index>(io::get_u64(in));
    p.reference_candidate.resize(static_cast<std::size_t>(rows));
    for (auto& c : p.reference_candidate) c = static_cast<Index>(io::get_u64(in));
    p.reference.resize(rows, cols);
    io::get_f64s(in, p.reference.data(), p.reference.size());
}

}  // namespace

void save_partition(const fs::path& dir, const Manifest& manifest, const RepeatOutput& out) {
    const auto& p = out.partition;
    json j = {{"format", "nbi-partition"},
              {"version", 1},
              {"kernel", manifest.kernel},
              {"labels", p.labels},
              {"num_basins", p.num_basins},
              {"risk", jsonutil::from_matrix(p.risk)},
              {"horizon", manifest.nbi.horizon},
              {"indicate_trajectories", manifest.nbi.indicate_trajectories},
              {"indicate_seed", derive_seed(out.record.seed, 2)}};
    json merged = json::array();
    for (const auto& m : p.merged_pairs) merged.push_back({{"i", m.i}, {"j", m.j}, {"risk", m.risk}});
    j["merged_pairs"] = merged;
    if (!p.classifier.empty()) {
        std::ostringstream ck, ref;
        write_checkpoint(p.classifier, ck);
        write_reference(p, ref);
        write_file_atomic(dir / "classifier.bin", ck.str());
        write_file_atomic(dir / "reference.bin", ref.str());
        j["checkpoint"] = "classifier.bin";
        j["reference"] = "reference.bin";
    } else {
        j["checkpoint"] = nullptr;
        j["reference"] = nullptr;
    }
    write_file_atomic(dir / "partition.json", j.dump(2) + "\n");
}

SavedPartition load_partition(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    if (j.value("format", std::string()) != "nbi-partition") throw ValidationError(path.string() + " is not a partition file");
    SavedPartition s;
    s.bundle = make_kernel(j.at("kernel"));
    s.partition.labels = j.at("labels").get<std::vector<Index>>();
    if (s.partition.labels.empty()) throw ValidationError("partition has no labels");
    s.partition.num_basins = j.at("num_basins").get<Index>();
    s.partition.risk = jsonutil::to_matrix(j.at("risk"));
    s.horizon = j.at("horizon").get<Index>();
    s.trajectories = j.at("indicate_trajectories").get<Index>();
    s.seed = j.at("indicate_seed").get<std::uint64_t>();
    const fs::path base = path.parent_path();
    if (!j.at("checkpoint").is_null()) {
        std::istringstream ck(read_file(base / j.at("checkpoint").get<std::string>()));
        s.partition.classifier = read_checkpoint(ck);
        std::istringstream ref(read_file(base / j.at("reference").get<std::string>()));
        read_reference(s.partition, ref);
        if (s.partition.classifier.input_dim() != s.bundle.kernel->dimension())
            throw ValidationError("checkpoint dimension does not match the kernel");
    } else if (s.partition.labels.size() != 1) {
        throw ValidationError("partition with several candidates needs a checkpoint");
    }
    return s;
}

RowMatrix read_points_csv(std::istream& in, Index dim) {
    std::vector<double> values;
    std::string line;
    Index line_no = 0;
    Index rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> row;
        bool numeric = true;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t end = line.find(',', pos);
            if (end == std::string::npos) end = line.size();
            std::size_t a = line.find_first_not_of(" \t", pos);
            std::size_t b = line.find_last_not_of(" \t", end == 0 ? 0 : end - 1);
            double v = 0.0;
            if (a == std::string::npos || a >= end || b < a) {
                numeric = false;
                break;
            }
            if (line[a] == '+') ++a;
            const auto res = std::from_chars(line.data() + a, line.data() + b + 1, v);
            if (res.ec != std::errc() || res.ptr != line.data() + b + 1) {
                numeric = false;
                break;
            }
            row.push_back(v);
            pos = end + 1;
        }
        if (!numeric) {
            if (rows == 0 && values.empty() && line_no == 1) continue;  // header
            throw ValidationError("line " + std::to_string(line_no) + ": not a row of numbers");
        }
        if (static_cast<Index>(row.size()) != dim)
            throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                                  " values, got " + std::to_string(row.size()));
        for (double v : row)
            if (!std::isfinite(v)) throw ValidationError("line " + std::to_string(line_no) + ": non-finite value");
        values.insert(values.end(), row.begin(), row.end());
        ++rows;
    }
    RowMatrix m(rows, dim);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

std::vector<Index> indicate_points(const SavedPartition& saved, const RowMatrix& points) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(points.rows()));
    for (Index k = 0; k < points.rows(); ++k) {
        out.push_back(indicate(saved.partition, points.row(k).transpose(), *saved.bundle.kernel, saved.horizon,
                               saved.trajectories, derive_seed(saved.seed, static_cast<std::uint64_t>(k))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plot dump

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t end = line.find(',', pos);
        out.push_back(line.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ValidationError("bad number '" + s + "' in artifact");
    return v;
}

}  // namespace

std::vector<fs::path> dump_plot(const fs::path& run_dir) {
    json results;
    try {
        results = json::parse(read_file(run_dir / "results.json"));
    } catch (const json::exception& e) {
        throw ValidationError("results.json: " + std::string(e.what()));
    }
    const Manifest manifest = manifest_from_json(results.at("manifest"));
    const KernelBundle bundle = make_kernel(manifest.kernel);
    const GroundTruth truth = make_ground_truth(bundle, manifest.ground_truth);
    const bool project = bundle.energy && bundle.energy.embedding() != nullptr;
    const Index dim = bundle.kernel->dimension();
    const Index out_dim = project ? bundle.energy.intrinsic_dim() : dim;

    std::vector<fs::path> written;
    for (const auto& rep : results.at("repeats")) {
        if (!rep.at("ok").get<bool>()) continue;
        const fs::path dir = repeat_dir(run_dir, rep.at("repeat").get<Index>());
        std::map<Index, Index> predicted;
        {
            std::istringstream in(read_file(dir / "labels.csv"));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto f = split_csv(line);
                predicted[static_cast<Index>(parse_double(f.at(0)))] = static_cast<Index>(parse_double(f.at(1)));
            }
        }
        std::istringstream in(read_file(dir / "trajectories.csv"));
        std::ostringstream out;
        out << "trajectory_id,candidate,step";
        for (Index d = 0; d < out_dim; ++d) out << ",c" << d;
        out << ",predicted,true\n";
        std::string line;
        std::getline(in, line);
        Vector x(dim);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv(line);
            if (static_cast<Index>(f.size()) != dim + 3) throw ValidationError("malformed trajectories.csv in " + dir.string());
            for (Index d = 0; d < dim; ++d) x(d) = parse_double(f[static_cast<std::size_t>(d + 3)]);
            const Index cand = static_cast<Index>(parse_double(f[1]));
            const auto it = predicted.find(cand);
            if (it == predicted.end()) throw ValidationError("trajectory references unknown candidate");
            const Vector c = project ? bundle.energy.project(x) : x;
            out << f[0] << ',' << f[1] << ',' << f[2];
            for (Index d = 0; d < c.size(); ++d) out << ',' << io::format_double(c(d));
            out << ',' << it->second << ',' << truth(x) << '\n';
        }
        write_file_atomic(dir / "plot.csv", out.str());
        written.push_back(dir / "plot.csv");
    }
    return written;
}

}  // namespace nbi
