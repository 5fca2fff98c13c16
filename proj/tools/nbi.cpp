// nbi: command-line driver for basin identification experiments.
//
//   nbi run <manifest.json> [--out DIR] [--workers N] [--quiet]
//   nbi indicate <partition.json> <points.csv> [--output FILE]
//   nbi dump-plot <run-dir>
//   nbi verify-theorem <chain.json>
//
// Exit codes: 0 success, 1 invalid input, 2 pipeline failure,
// 3 acceptance threshold missed. NBI_WORKERS sets the worker count.

#include "nbi/experiment.hpp"
#include "nbi/oracle.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

enum Exit : int { ok = 0, invalid = 1, pipeline = 2, threshold = 3 };

int cmd_run(const std::string& manifest_path, const std::string& out_dir, int workers, bool quiet) {
    const nbi::Manifest m = nbi::load_manifest(manifest_path);
    nbi::RunOptions opt;
    if (!out_dir.empty()) opt.output_dir = out_dir;
    opt.workers = workers;
    opt.verbose = !quiet;
    const nbi::RunResult r = nbi::run_experiment(m, opt);

    std::cout << m.name << '\n';
    std::cout << "repeat  candidates  basins      ARI      NMI\n";
    for (const auto& rep : r.repeats) {
        std::cout << std::setw(6) << rep.repeat;
        if (!rep.ok) {
            std::cout << "  failed: " << rep.error << '\n';
            continue;
        }
        std::cout << std::setw(12) << rep.num_candidates << std::setw(8) << rep.num_basins << std::fixed
                  << std::setprecision(4) << std::setw(9) << rep.ari << std::setw(9) << rep.nmi << std::defaultfloat
                  << '\n';
    }
    std::cout << std::fixed << std::setprecision(4) << "ARI " << r.ari.mean << " +- " << r.ari.std << "  NMI "
              << r.nmi.mean << " +- " << r.nmi.std << "  basins " << std::setprecision(2) << r.num_basins.mean
              << " +- " << r.num_basins.std << std::defaultfloat << '\n';
    for (const auto& a : r.acceptance)
        std::cout << (a.passed ? "PASS " : "FAIL ") << a.criterion << ": " << a.detail << '\n';
    std::cout << "results: " << (opt.output_dir.value_or(m.output_dir) / "results.json").string() << '\n';
    if (r.failed > 0) return pipeline;
    return r.accepted() ? ok : threshold;
}

int cmd_indicate(const std::string& partition_path, const std::string& points_path, const std::string& output) {
    const nbi::SavedPartition saved = nbi::load_partition(partition_path);
    std::ifstream in(points_path);
    if (!in) throw nbi::ValidationError("cannot open " + points_path);
    const nbi::RowMatrix points = nbi::read_points_csv(in, saved.bundle.kernel->dimension());
    const auto labels = nbi::indicate_points(saved, points);
    std::ostringstream out;
    out << "point,basin\n";
    for (std::size_t k = 0; k < labels.size(); ++k) out << k << ',' << labels[k] << '\n';
    if (output.empty())
        std::cout << out.str();
    else
        nbi::write_file_atomic(output, out.str());
    return ok;
}

int cmd_dump_plot(const std::string& dir) {
    for (const auto& p : nbi::dump_plot(dir)) std::cout << p.string() << '\n';
    return ok;
}

int cmd_verify(const std::string& chain_path) {
    std::ifstream in(chain_path);
    if (!in) throw nbi::ValidationError("cannot open " + chain_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw nbi::ValidationError(chain_path + ": " + e.what());
    }
    const nbi::ChainFixture f = nbi::chain_from_json(j);
    const nbi::TheoremReport report = nbi::verify_theorem1(f.chain, f.t_star, f.T);
    std::cout << report.to_json().dump(2) << '\n';
    return report.violations() == 0 ? ok : threshold;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural basin identification"};
    app.require_subcommand(1);

    std::string manifest, out_dir;
    int workers = 0;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run an experiment manifest");
    run->add_option("manifest", manifest, "Manifest JSON")->required();
    run->add_option("--out", out_dir, "Output directory (overrides the manifest)");
    run->add_option("--workers", workers, "Worker threads (default: NBI_WORKERS or hardware)");
    run->add_flag("--quiet", quiet, "No per-repeat progress on stderr");

    std::string partition, points, output;
    auto* ind = app.add_subcommand("indicate", "Assign points to basins of a saved partition");
    ind->add_option("partition", partition, "partition.json from a run")->required();
    ind->add_option("points", points, "CSV of points, one per row")->required();
    ind->add_option("--output", output, "Write assignments here instead of stdout");

    std::string run_dir;
    auto* dump = app.add_subcommand("dump-plot", "Write plot.csv for every repeat of a run");
    dump->add_option("dir", run_dir, "Run output directory")->required();

    std::string chain;
    auto* verify = app.add_subcommand("verify-theorem", "Check the identifiability bounds on a finite chain");
    verify->add_option("chain", chain, "Chain JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : invalid;
    }

    try {
        if (*run) return cmd_run(manifest, out_dir, workers, quiet);
        if (*ind) return cmd_indicate(partition, points, output);
        if (*dump) return cmd_dump_plot(run_dir);
        if (*verify) return cmd_verify(chain);
    } catch (const nbi::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return invalid;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return invalid;
    } catch (const std::exception& e) {
        std::cerr << "pipeline failure: " << e.what() << '\n';
        return pipeline;
    }
    return invalid;
}
