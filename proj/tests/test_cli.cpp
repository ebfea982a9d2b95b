#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out_p = scratch / "stdout.txt";
    const fs::path err_p = scratch / "stderr.txt";
    const std::string cmd = std::string("\"") + CATPRUNE_CLI_PATH + "\" " + args +
                            " > \"" + out_p.string() + "\" 2> \"" +
                            err_p.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out  = slurp(out_p);
    r.err  = slurp(err_p);
    return r;
}

// small toy setup so each invocation stays fast
void write_small_config(const fs::path& p, const std::string& extra = "") {
    std::ofstream out(p);
    out << "total_steps = 10\n"
           "warmup_steps = 3\n"
           "alpha = 0.5\n"
           "cluster_count = 4\n"
           "grid_height = 4\n"
           "grid_width = 4\n"
           "noise_channels = 4\n"
           "layers = 2\n"
           "model_width = 16\n"
           "heads = 2\n"
           "mlp_ratio = 2\n"
           "text_tokens = 4\n"
        << extra;
}

std::map<std::string, std::string> dir_contents(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        files[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return files;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    testsup::TempDir dir("cli-help");
    EXPECT_EQ(run_cli("--help", dir.path()).code, 0);
    const CliResult sub = run_cli("run --help", dir.path());
    EXPECT_EQ(sub.code, 0);
    EXPECT_NE(sub.out.find("--alpha"), std::string::npos);
}

TEST(Cli, RejectsBadInvocations) {
    testsup::TempDir dir("cli-bad");
    EXPECT_EQ(run_cli("", dir.path()).code, 2);           // subcommand required
    EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 2);  // unknown subcommand
    EXPECT_EQ(run_cli("run --no-such-flag", dir.path()).code, 2);
}

TEST(Cli, ConfigValidationFailuresExitTwo) {
    testsup::TempDir dir("cli-val");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg);
    const CliResult bad_alpha =
        run_cli("run --config \"" + cfg.string() + "\" --alpha 2", dir.path());
    EXPECT_EQ(bad_alpha.code, 2);
    EXPECT_NE(bad_alpha.err.find("alpha"), std::string::npos);

    const CliResult bad_decay = run_cli(
        "run --config \"" + cfg.string() + "\" --ewma-decay 1.5", dir.path());
    EXPECT_EQ(bad_decay.code, 2);

    const fs::path broken = dir.path() / "broken.cfg";
    std::ofstream(broken) << "alpha = 0.4\nmystery = 1\n";
    const CliResult bad_file =
        run_cli("run --config \"" + broken.string() + "\"", dir.path());
    EXPECT_EQ(bad_file.code, 2);
    EXPECT_NE(bad_file.err.find("broken.cfg:2"), std::string::npos);
}

TEST(Cli, IoFailuresExitThree) {
    testsup::TempDir dir("cli-io");
    EXPECT_EQ(run_cli("run --config /no/such/file.cfg", dir.path()).code, 3);
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg, "model = synthetic-smooth\n");
    const CliResult r = run_cli(
        "run --config \"" + cfg.string() + "\" --out /dev/null/x", dir.path());
    EXPECT_EQ(r.code, 3);
}

TEST(Cli, RunProducesIdenticalArtifactsAcrossInvocations) {
    testsup::TempDir dir("cli-det");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg);
    const std::string base =
        "run --config \"" + cfg.string() + "\" --seed 11 --alpha 0.4";
    const fs::path out_a = dir.path() / "a";
    const fs::path out_b = dir.path() / "b";
    const CliResult ra =
        run_cli(base + " --out \"" + out_a.string() + "\"", dir.path());
    const CliResult rb =
        run_cli(base + " --out \"" + out_b.string() + "\"", dir.path());
    ASSERT_EQ(ra.code, 0);
    ASSERT_EQ(rb.code, 0);
    EXPECT_NE(ra.out.find("final latent hash"), std::string::npos);

    const auto a = dir_contents(out_a);
    const auto b = dir_contents(out_b);
    ASSERT_FALSE(a.empty());
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [rel, bytes] : a) {
        const auto it = b.find(rel);
        ASSERT_NE(it, b.end()) << rel << " missing from the second run";
        ASSERT_EQ(bytes, it->second) << rel << " differs between runs";
    }
    EXPECT_TRUE(a.count("metrics.json"));
    EXPECT_TRUE(a.count("final_latent.bin"));
    EXPECT_TRUE(a.count("clusters.pgm"));
    EXPECT_TRUE(a.count("selection_masks/step_001.pgm"));
    EXPECT_TRUE(a.count("noise_norm/step_010.csv"));
}

TEST(Cli, RunJsonReportParses) {
    testsup::TempDir dir("cli-json");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg, "model = synthetic-smooth\n");
    const CliResult r = run_cli("run --config \"" + cfg.string() +
                                    "\" --seed 3 --out \"" +
                                    (dir.path() / "out").string() + "\" --json",
                                dir.path());
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["schema_version"], 1);
    EXPECT_EQ(j["config"]["model"], "synthetic-smooth");
    EXPECT_EQ(j["steps"].size(), 10u);
    // stdout mirrors the exported file
    EXPECT_EQ(j, nlohmann::json::parse(slurp(dir.path() / "out" / "metrics.json")));
}

TEST(Cli, SeedFlagOverridesConfigFile) {
    testsup::TempDir dir("cli-seed");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg, "model = synthetic-smooth\nseed = 1\n");
    auto hash_for = [&](const std::string& extra, const fs::path& out) {
        const CliResult r = run_cli("run --config \"" + cfg.string() + "\" " +
                                        extra + " --out \"" + out.string() +
                                        "\" --json",
                                    dir.path());
        EXPECT_EQ(r.code, 0);
        return nlohmann::json::parse(r.out)["final_latent_hash"]
            .get<std::uint64_t>();
    };
    const auto from_file = hash_for("", dir.path() / "o1");
    const auto overridden = hash_for("--seed 99", dir.path() / "o2");
    const auto repeat     = hash_for("--seed 99", dir.path() / "o3");
    EXPECT_NE(from_file, overridden);
    EXPECT_EQ(overridden, repeat);
}

TEST(Cli, CompareEmitsSharedFullHash) {
    testsup::TempDir dir("cli-cmp");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg, "model = synthetic-smooth\n");
    auto compare_with = [&](const std::string& mode, const fs::path& out) {
        const CliResult r = run_cli("compare --config \"" + cfg.string() +
                                        "\" --seed 4 --mode " + mode +
                                        " --out \"" + out.string() + "\" --json",
                                    dir.path());
        EXPECT_EQ(r.code, 0) << r.err;
        return nlohmann::json::parse(r.out);
    };
    const auto cat  = compare_with("full-cat", dir.path() / "c1");
    const auto rows = compare_with("sequential-rows", dir.path() / "c2");
    EXPECT_EQ(cat["full_latent_hash"], rows["full_latent_hash"]);
    EXPECT_NE(cat["pruned_latent_hash"], rows["pruned_latent_hash"]);
    EXPECT_GT(cat["fidelity"]["psnr_db"].get<double>(), 0.0);
    // the exported file carries the same payload
    const auto file = nlohmann::json::parse(slurp(dir.path() / "c1" / "compare.json"));
    EXPECT_EQ(file, cat);

    const CliResult text = run_cli("compare --config \"" + cfg.string() +
                                       "\" --seed 4 --out \"" +
                                       (dir.path() / "c3").string() + "\"",
                                   dir.path());
    EXPECT_EQ(text.code, 0);
    EXPECT_NE(text.out.find("vs full"), std::string::npos);
}

TEST(Cli, MacsReportsReferenceSchedules) {
    testsup::TempDir dir("cli-macs");
    const fs::path cfg = dir.path() / "run.cfg";
    // zero text rows: the analytic ratio collapses to the warm-share form
    std::ofstream(cfg) << "text_tokens = 0\n";
    const CliResult r =
        run_cli("macs --config \"" + cfg.string() + "\" --json", dir.path());
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    const auto& rows = j["schedules"];
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0]["schedule"], "configured");
    EXPECT_NEAR(rows[0]["ratio_vs_full"].get<double>(), 0.5, 1e-9);
    EXPECT_EQ(rows[1]["schedule"], "reference-28");
    const double r28 = rows[1]["ratio_vs_full"].get<double>();
    EXPECT_GT(r28, 0.48);
    EXPECT_LT(r28, 0.58);
    EXPECT_EQ(rows[2]["schedule"], "reference-50");
    const double r50 = rows[2]["ratio_vs_full"].get<double>();
    EXPECT_GT(r50, 0.40);
    EXPECT_LT(r50, 0.50);

    const CliResult table = run_cli("macs", dir.path());
    EXPECT_EQ(table.code, 0);
    EXPECT_NE(table.out.find("reference-50"), std::string::npos);
}

TEST(Cli, ClusterVizExportsMapAndScores) {
    testsup::TempDir dir("cli-viz");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg);
    const fs::path out = dir.path() / "viz";
    const CliResult r = run_cli("cluster-viz --config \"" + cfg.string() +
                                    "\" --seed 2 --out \"" + out.string() +
                                    "\" --json",
                                dir.path());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["clusters"], 4);
    EXPECT_EQ(j["scores"].size(), 4u);

    const catprune::PgmImage img = catprune::read_pgm(out / "clusters.pgm");
    EXPECT_EQ(img.width, 4);
    EXPECT_EQ(img.height, 4);
    std::istringstream csv(slurp(out / "cluster_scores.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "cluster_id,score");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 4);
}

TEST(Cli, SequentialRowsMasksSweepTheGrid) {
    testsup::TempDir dir("cli-rows");
    const fs::path cfg = dir.path() / "run.cfg";
    write_small_config(cfg, "model = synthetic-smooth\n");
    const fs::path out = dir.path() / "out";
    const CliResult r = run_cli("run --config \"" + cfg.string() +
                                    "\" --mode sequential-rows --out \"" +
                                    out.string() + "\"",
                                dir.path());
    ASSERT_EQ(r.code, 0) << r.err;

    // first pruned step covers rows 0 and 1, the next one rows 2 and 3
    const auto m4 = catprune::read_pgm(out / "selection_masks" / "step_004.pgm");
    const auto m5 = catprune::read_pgm(out / "selection_masks" / "step_005.pgm");
    for (int i = 0; i < 16; ++i) {
        EXPECT_EQ(m4.pixels[i], i < 8 ? 255 : 0) << "pixel " << i;
        EXPECT_EQ(m5.pixels[i], i >= 8 ? 255 : 0) << "pixel " << i;
    }
}
