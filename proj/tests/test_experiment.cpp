#include "nbi/experiment.hpp"
#include "nbi/metrics.hpp"

#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace nbi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_ring(Index dim = 2) {
    json energy = {{"kind", "double-ring"}, {"params", {{"r1", 1.0}, {"r2", 3.0}, {"sigma", 0.1}}}};
    if (dim > 2)
        energy = {{"kind", "augmented-embedding"},
                  {"params", {{"base", energy}, {"ambient_dim", dim}, {"orthogonal_sigma", 1.0}}},
                  {"seed", 3}};
    return {{"name", "tiny-ring"},
            {"kernel", {{"kind", "mala"}, {"energy", energy}, {"step_size", 0.008}}},
            {"nbi",
             {{"horizon", 200},
              {"trajectories_per_candidate", 16},
              {"discovery", {{"num_chains", 4}, {"horizon", 200}, {"init", {{"kind", "gaussian"}, {"std", 2.0}}}}},
              {"network", {{"trunk_hidden", {8}}, {"embedding_dim", 4}, {"head_hidden", {4}}}},
              {"train", {{"epochs", 2}}},
              {"train_pairs", 400},
              {"eval_pairs_per_cell", 16}}},
            {"num_repeats", 2},
            {"seed", 99},
            {"plot", {{"trajectories", 2}, {"stride", 50}}}};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("nbi-test-" + tag + "-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

RunResult run_to(const json& manifest, const fs::path& dir) {
    RunOptions opt;
    opt.output_dir = dir;
    opt.workers = 1;
    return run_experiment(manifest_from_json(manifest), opt);
}

struct Cli {
    int code;
    std::string out, err;
};

Cli cli(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    const std::string cmd = std::string(NBI_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        rows.push_back(f);
    }
    return rows;
}

}  // namespace

TEST_CASE("a manifest and seed determine every output byte") {
    TempDir a("det-a"), b("det-b");
    run_to(tiny_ring(), a.path);
    run_to(tiny_ring(), b.path);
    CHECK(slurp(a.path / "results.json") == slurp(b.path / "results.json"));
    for (const char* f : {"labels.csv", "endpoints.csv", "trajectories.csv", "partition.json", "classifier.bin",
                          "reference.bin"})
        CHECK_MESSAGE(slurp(a.path / "repeat_01" / f) == slurp(b.path / "repeat_01" / f), f);

    json other = tiny_ring();
    other["seed"] = 100;
    TempDir c("det-c");
    run_to(other, c.path);
    CHECK(slurp(a.path / "results.json") != slurp(c.path / "results.json"));
}

TEST_CASE("the worker count does not change results") {
    TempDir a("w1"), b("w3");
    RunOptions opt;
    opt.output_dir = a.path;
    opt.workers = 1;
    run_experiment(manifest_from_json(tiny_ring()), opt);
    opt.output_dir = b.path;
    opt.workers = 3;
    run_experiment(manifest_from_json(tiny_ring()), opt);
    CHECK(slurp(a.path / "results.json") == slurp(b.path / "results.json"));
}

TEST_CASE("aggregates recompute from the per-repeat records") {
    TempDir d("agg");
    json m = tiny_ring();
    m["num_repeats"] = 3;
    run_to(m, d.path);
    const json r = json::parse(slurp(d.path / "results.json"));
    std::vector<double> ari, nmi, basins;
    for (const auto& rep : r.at("repeats")) {
        REQUIRE(rep.at("ok").get<bool>());
        ari.push_back(rep.at("ari").get<double>());
        nmi.push_back(rep.at("nmi").get<double>());
        basins.push_back(rep.at("num_basins").get<double>());
    }
    REQUIRE(ari.size() == 3);
    auto check = [&](const char* key, const std::vector<double>& v) {
        double mean = 0;
        for (double x : v) mean += x;
        mean /= 3.0;
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const json& agg = r.at("aggregate").at(key);
        CHECK(agg.at("mean").get<double>() == doctest::Approx(mean).epsilon(1e-15));
        CHECK(agg.at("std").get<double>() == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));
    };
    check("ari", ari);
    check("nmi", nmi);
    check("num_basins", basins);
    CHECK(r.at("aggregate").at("completed").get<int>() == 3);
}

TEST_CASE("run records per-repeat failures and carries on") {
    // Four held-out endpoints per candidate cannot supply 200 distinct pairs.
    json m = tiny_ring();
    m["nbi"]["eval_pairs_per_cell"] = 200;
    TempDir d("fail");
    const RunResult r = run_to(m, d.path);
    CHECK(r.failed == 2);
    for (const auto& rep : r.repeats) {
        CHECK_FALSE(rep.ok);
        CHECK(rep.error.find("evaluation pairs") != std::string::npos);
    }
    CHECK(fs::exists(d.path / "results.json"));
}

TEST_CASE("manifest validation") {
    json m = tiny_ring();
    m["num_repeats"] = 0;
    CHECK_THROWS_AS(manifest_from_json(m), ValidationError);
    m = tiny_ring();
    m["colour"] = "red";
    CHECK_THROWS_AS(manifest_from_json(m), ValidationError);
    m = tiny_ring();
    m["ground_truth"] = "nearest-mean";
    CHECK_THROWS_AS(manifest_from_json(m), ValidationError);
    m = tiny_ring();
    m["kernel"]["kind"] = "langevin";
    CHECK_THROWS_AS(manifest_from_json(m), ValidationError);
    CHECK(manifest_from_json(tiny_ring()).ground_truth == "nearest-ring");
}

TEST_CASE("plot dump: schema, raw coordinates in 2-d") {
    TempDir d("plot2");
    json m = tiny_ring();
    m["num_repeats"] = 1;
    run_to(m, d.path);
    const auto files = dump_plot(d.path);
    REQUIRE(files.size() == 1);
    const auto plot = csv_rows(slurp(files[0]));
    const auto traj = csv_rows(slurp(d.path / "repeat_00" / "trajectories.csv"));
    const auto labels = csv_rows(slurp(d.path / "repeat_00" / "labels.csv"));
    CHECK(plot[0] == std::vector<std::string>{"trajectory_id", "candidate", "step", "c0", "c1", "predicted", "true"});
    // 4 candidates x 2 trajectories x (200 / 50 + 1) kept steps.
    REQUIRE(plot.size() == 1 + 4 * 2 * 5);
    REQUIRE(traj.size() == plot.size());
    for (std::size_t r = 1; r < plot.size(); ++r) {
        for (int c = 0; c < 5; ++c) CHECK(plot[r][static_cast<std::size_t>(c)] == traj[r][static_cast<std::size_t>(c)]);
        const auto cand = std::stoul(plot[r][1]);
        CHECK(plot[r][5] == labels[cand + 1][1]);
        const double radius = std::hypot(std::stod(plot[r][3]), std::stod(plot[r][4]));
        CHECK(plot[r][6] == (radius <= 2.0 ? "0" : "1"));
    }
    CHECK(std::set<std::string>{plot[1][2], plot[2][2], plot[5][2]} == std::set<std::string>{"0", "50", "200"});
}

TEST_CASE("plot dump projects embedded landscapes onto the ring plane") {
    TempDir d("plot100");
    json m = tiny_ring(100);
    m["num_repeats"] = 1;
    m["nbi"]["horizon"] = 400;
    m["nbi"]["discovery"]["horizon"] = 400;
    run_to(m, d.path);
    const auto files = dump_plot(d.path);
    REQUIRE(files.size() == 1);
    const auto plot = csv_rows(slurp(files[0]));
    REQUIRE(plot[0].size() == 7);
    int near = 0, total = 0;
    for (std::size_t r = 1; r < plot.size(); ++r) {
        if (plot[r][2] == "0") continue;  // candidate itself; the chain has settled by then anyway
        const double radius = std::hypot(std::stod(plot[r][3]), std::stod(plot[r][4]));
        near += std::min(std::abs(radius - 1.0), std::abs(radius - 3.0)) < 0.4;
        ++total;
    }
    CHECK(near == total);
}

TEST_CASE("missing artifacts are reported") {
    TempDir d("missing");
    CHECK_THROWS_AS(dump_plot(d.path), ValidationError);
    CHECK_THROWS_AS(load_partition(d.path / "partition.json"), ValidationError);
}

TEST_CASE("points csv parsing") {
    std::istringstream ok("x,y\n1,2\n\n3.5, -4e-1\n");
    const RowMatrix p = read_points_csv(ok, 2);
    REQUIRE(p.rows() == 2);
    CHECK(p(1, 0) == 3.5);
    CHECK(p(1, 1) == -0.4);
    std::istringstream empty("");
    CHECK(read_points_csv(empty, 2).rows() == 0);
    std::istringstream wide("1,2\n1,2,3\n");
    try {
        read_points_csv(wide, 2);
        FAIL("expected a dimension error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).rfind("line 2", 0) == 0);
    }
    std::istringstream junk("1,2\nfoo,3\n");
    CHECK_THROWS_AS(read_points_csv(junk, 2), ValidationError);
}

TEST_CASE("command line: exit codes and indicate") {
    TempDir d("cli");
    json m = tiny_ring();
    m["num_repeats"] = 1;
    spit(d.path / "tiny.json", m.dump());

    const Cli run = cli("run " + (d.path / "tiny.json").string() + " --out " + (d.path / "run").string() + " --quiet",
                        d.path);
    CHECK(run.code == 0);
    CHECK(run.out.find("tiny-ring") == 0);
    const fs::path partition = d.path / "run" / "repeat_00" / "partition.json";
    REQUIRE(fs::exists(partition));

    SUBCASE("empty points file gives an empty table") {
        spit(d.path / "empty.csv", "");
        const Cli r = cli("indicate " + partition.string() + " " + (d.path / "empty.csv").string(), d.path);
        CHECK(r.code == 0);
        CHECK(r.out == "point,basin\n");
    }
    SUBCASE("a wrong-width point names its line") {
        spit(d.path / "bad.csv", "x,y\n0,1\n0,1,2\n");
        const Cli r = cli("indicate " + partition.string() + " " + (d.path / "bad.csv").string(), d.path);
        CHECK(r.code == 1);
        CHECK(r.err.find("line 3") != std::string::npos);
    }
    SUBCASE("assignments match the library") {
        spit(d.path / "pts.csv", "1,0\n0,-3\n2.9,0.5\n");
        const Cli r = cli("indicate " + partition.string() + " " + (d.path / "pts.csv").string() + " --output " +
                              (d.path / "out.csv").string(),
                          d.path);
        CHECK(r.code == 0);
        const SavedPartition saved = load_partition(partition);
        RowMatrix pts(3, 2);
        pts << 1, 0, 0, -3, 2.9, 0.5;
        const auto labels = indicate_points(saved, pts);
        std::ostringstream expect;
        expect << "point,basin\n";
        for (std::size_t k = 0; k < labels.size(); ++k) expect << k << ',' << labels[k] << '\n';
        CHECK(slurp(d.path / "out.csv") == expect.str());
    }
    SUBCASE("dump-plot lists the files it wrote") {
        const Cli r = cli("dump-plot " + (d.path / "run").string(), d.path);
        CHECK(r.code == 0);
        CHECK(r.out.find("plot.csv") != std::string::npos);
    }
    SUBCASE("bad input exits 1, a missed threshold exits 3") {
        spit(d.path / "broken.json", "{\"name\": ");
        CHECK(cli("run " + (d.path / "broken.json").string(), d.path).code == 1);
        CHECK(cli("run " + (d.path / "nowhere.json").string(), d.path).code == 1);
        CHECK(cli("frobnicate", d.path).code == 1);
        json strict = m;
        strict["acceptance"] = {{"exact_basins", 5}, {"min_exact_basins", 1}};
        spit(d.path / "strict.json", strict.dump());
        const Cli r = cli("run " + (d.path / "strict.json").string() + " --out " + (d.path / "strict").string() +
                              " --quiet",
                          d.path);
        CHECK(r.code == 3);
        CHECK(r.out.find("FAIL") != std::string::npos);
    }
    SUBCASE("verify-theorem on the nearly reducible fixture") {
        const Cli r = cli("verify-theorem " + std::string(NBI_FIXTURES) + "/leaky-six.json", d.path);
        CHECK(r.code == 0);
        const json report = json::parse(r.out);
        CHECK(report.at("violations").get<int>() == 0);
        CHECK(report.at("pairs").size() == 6);
    }
}
