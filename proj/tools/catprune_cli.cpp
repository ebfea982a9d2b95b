// Experiment runner: run / compare / macs / cluster-viz over the pruning
// pipeline. Exit codes: 0 ok, 2 bad configuration, 3 I/O failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "catprune/catprune.hpp"

namespace {

struct CliOptions {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::optional<int> t0;
    std::optional<int> steps;
    std::optional<int> clusters;
    std::optional<double> ewma_decay;
    std::optional<double> stale_frac;
    std::optional<std::string> mode;
    std::optional<std::string> out;
    bool json = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& o) {
    cmd->add_option("--config", o.config_path, "configuration file (key = value lines)");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--alpha", o.alpha, "fraction of image tokens recomputed per pruned step");
    cmd->add_option("--t0", o.t0, "number of full warmup steps");
    cmd->add_option("--steps", o.steps, "total sampling steps");
    cmd->add_option("--clusters", o.clusters, "cluster count");
    cmd->add_option("--ewma-decay", o.ewma_decay, "frequency tracker decay in (0,1)");
    cmd->add_option("--stale-frac", o.stale_frac, "share of the budget reserved for stale tokens");
    cmd->add_option("--mode", o.mode,
                    "selection strategy: full-cat | noise-only | noise-staleness | sequential-rows");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_flag("--json", o.json, "machine-readable output on stdout");
}

catprune::ExperimentConfig resolve_config(const CliOptions& o) {
    catprune::ExperimentConfig ec;
    if (o.config_path) ec = catprune::load_config_file(*o.config_path);
    catprune::RunConfig& r = ec.run;
    if (o.seed) r.seed = *o.seed;
    if (o.alpha) r.alpha = *o.alpha;
    if (o.t0) r.warmup_steps = *o.t0;
    if (o.steps) r.total_steps = *o.steps;
    if (o.clusters) r.cluster_count = *o.clusters;
    if (o.ewma_decay) r.ewma_decay = *o.ewma_decay;
    if (o.stale_frac) r.stale_fraction = *o.stale_frac;
    if (o.mode) r.strategy = catprune::parse_strategy(*o.mode);
    if (o.out) ec.out_dir = *o.out;
    r.validate();
    return ec;
}

int cmd_run(const CliOptions& o) {
    const catprune::ExperimentConfig ec = resolve_config(o);
    catprune::RunResult result          = catprune::sample(ec.run);
    catprune::export_run(result, ec);
    if (o.json) {
        std::cout << catprune::run_report_json(result, ec.export_timings).dump(2)
                  << "\n";
    } else {
        std::cout << "wrote " << ec.out_dir << " (final latent hash "
                  << result.final_latent_hash() << ")\n";
    }
    return 0;
}

int cmd_compare(const CliOptions& o) {
    const catprune::ExperimentConfig ec = resolve_config(o);
    const catprune::CompareResult cmp   = catprune::compare_runs(ec.run);

    nlohmann::ordered_json j{
        {"schema_version", 1},
        {"config", catprune::config_json(ec.run)},
        {"full_latent_hash", cmp.full.final_latent_hash()},
        {"pruned_latent_hash", cmp.pruned.final_latent_hash()},
        {"fidelity",
         {{"mse", cmp.fid.mse},
          {"psnr_db", cmp.fid.psnr_db},
          {"max_abs", cmp.fid.max_abs}}},
        {"macs_ratio_vs_full", catprune::CostModel::from(ec.run).ratio_vs_full()},
    };
    std::error_code err;
    std::filesystem::create_directories(ec.out_dir, err);
    if (err) throw catprune::io_error("cannot create output directory: " + ec.out_dir);
    catprune::detail::write_file(std::filesystem::path(ec.out_dir) / "compare.json",
                                 j.dump(2) + "\n");
    if (o.json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::printf("strategy %s vs full: mse %.6g  psnr %.2f dB  max|d| %.6g\n",
                    to_string(ec.run.strategy).c_str(), cmp.fid.mse,
                    cmp.fid.psnr_db, cmp.fid.max_abs);
    }
    return 0;
}

int cmd_macs(const CliOptions& o) {
    const catprune::ExperimentConfig ec = resolve_config(o);

    auto row = [](const std::string& name, const catprune::CostModel& c) {
        return nlohmann::ordered_json{
            {"schedule", name},
            {"total_steps", c.total_steps},
            {"warmup_steps", c.warmup_steps},
            {"alpha", c.alpha},
            {"image_tokens", c.image_tokens},
            {"text_tokens", c.text_tokens},
            {"full_step_macs", c.full_step_macs()},
            {"pruned_step_macs", c.pruned_step_macs()},
            {"total_macs", c.total_macs()},
            {"ratio_vs_full", c.ratio_vs_full()},
        };
    };

    catprune::CostModel configured = catprune::CostModel::from(ec.run);

    // Reference schedules at the usual operating point with a 12% text share.
    catprune::CostModel ref28 = configured;
    ref28.total_steps         = 28;
    ref28.warmup_steps        = 8;
    ref28.alpha               = 0.3;
    ref28.text_tokens = catprune::round_half_up(0.12 * ref28.image_tokens);
    catprune::CostModel ref50 = ref28;
    ref50.total_steps         = 50;

    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    rows.push_back(row("configured", configured));
    rows.push_back(row("reference-28", ref28));
    rows.push_back(row("reference-50", ref50));

    if (o.json) {
        std::cout << nlohmann::ordered_json{{"schema_version", 1},
                                            {"schedules", rows}}
                         .dump(2)
                  << "\n";
        return 0;
    }
    std::printf("%-14s %5s %4s %6s %7s %6s %14s %14s %8s\n", "schedule", "N",
                "t0", "alpha", "img", "text", "full/step", "total", "ratio");
    for (const auto& r : rows) {
        std::printf("%-14s %5d %4d %6.3f %7d %6d %14.4g %14.4g %8.4f\n",
                    r["schedule"].get<std::string>().c_str(),
                    r["total_steps"].get<int>(), r["warmup_steps"].get<int>(),
                    r["alpha"].get<double>(), r["image_tokens"].get<int>(),
                    r["text_tokens"].get<int>(), r["full_step_macs"].get<double>(),
                    r["total_macs"].get<double>(), r["ratio_vs_full"].get<double>());
    }
    return 0;
}

int cmd_cluster_viz(const CliOptions& o) {
    catprune::ExperimentConfig ec = resolve_config(o);
    ec.run.strategy               = catprune::SelectionStrategy::FullCat;

    catprune::Pipeline pipe(ec.run);
    for (int i = 0; i <= ec.run.warmup_steps; ++i) pipe.run_step();
    if (!pipe.clusters()) {
        throw catprune::state_error("cluster-viz: no cluster model after t0+1");
    }
    const catprune::ClusterModel& model = *pipe.clusters();

    // Recreate the scores the selector saw at t0+1: the relative noise is
    // identically zero there, so the features are the weighted encoding alone.
    const catprune::TokenGrid zero_rn(ec.run.grid_height, ec.run.grid_width,
                                      ec.run.noise_channels);
    const catprune::PositionalEncoding pe(ec.run.grid_height, ec.run.grid_width,
                                          ec.run.noise_channels);
    const std::vector<double> features =
        catprune::build_features(zero_rn, pe, ec.run.pos_weight);
    const std::vector<double> scores =
        catprune::graph_pool(model, features, ec.run.neighbor_mix);

    std::error_code err;
    std::filesystem::create_directories(ec.out_dir, err);
    if (err) throw catprune::io_error("cannot create output directory: " + ec.out_dir);
    const std::filesystem::path root(ec.out_dir);
    catprune::write_pgm(root / "clusters.pgm",
                        catprune::cluster_image(model.assignment,
                                                ec.run.grid_height,
                                                ec.run.grid_width, model.k));
    catprune::write_scores_csv(root / "cluster_scores.csv", scores);
    if (o.json) {
        std::cout << nlohmann::ordered_json{{"schema_version", 1},
                                            {"clusters", model.k},
                                            {"scores", scores}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << "wrote " << ec.out_dir << "/clusters.pgm ("
                  << model.k << " clusters)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cluster-aware token pruning pipeline"};
    app.require_subcommand(1);

    CliOptions run_o, cmp_o, macs_o, viz_o;
    CLI::App* run = app.add_subcommand("run", "sample and export artifacts");
    add_common_flags(run, run_o);
    CLI::App* cmp = app.add_subcommand("compare", "pruned run against the full run");
    add_common_flags(cmp, cmp_o);
    CLI::App* macs = app.add_subcommand("macs", "analytic compute cost table");
    add_common_flags(macs, macs_o);
    CLI::App* viz = app.add_subcommand("cluster-viz", "export the frozen cluster map");
    add_common_flags(viz, viz_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(run_o);
        if (cmp->parsed()) return cmd_compare(cmp_o);
        if (macs->parsed()) return cmd_macs(macs_o);
        if (viz->parsed()) return cmd_cluster_viz(viz_o);
    } catch (const catprune::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
