#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "catprune/clustering.hpp"
#include "catprune/config.hpp"
#include "catprune/denoiser.hpp"
#include "catprune/grid.hpp"
#include "catprune/io.hpp"
#include "catprune/metrics.hpp"
#include "catprune/rng.hpp"
#include "catprune/selector.hpp"

namespace catprune {

struct StepTrace {
    int step     = 0;
    bool pruned  = false;
    int budget   = 0;  // image tokens recomputed this step
    int stale_quota = 0;
    TokenIndexSet selected;        // image-token ids
    TokenGrid noise;               // n_t
    std::vector<double> rn_norms;  // per-token |n_t - n_ref|; zeros before t0
    std::vector<double> freq;      // tracker state after this step (pruned only)
};

struct RunResult {
    RunConfig config;
    bool forced_full = false;
    TokenGrid final_latent;
    std::vector<StepTrace> steps;
    std::optional<ClusterModel> clusters;
    FrequencyTracker tracker;
    std::vector<double> step_ms;

    std::uint64_t final_latent_hash() const {
        return fnv1a64_bytes(final_latent.data.data(),
                             final_latent.data.size() * sizeof(double));
    }
};

// Euler sampling loop: warmup steps run the denoiser over every token, the
// reference noise is pinned at the last warmup step, and later steps recompute
// only the selected tokens while cached rows and noise carry the rest.
// force_full ignores the pruning machinery entirely.
class Pipeline {
  public:
    explicit Pipeline(const RunConfig& cfg, bool force_full = false)
        : cfg_(cfg), force_full_(force_full) {
        cfg_.validate();
        const Rng root(cfg_.seed);
        kmeans_rng_ = root.substream("kmeans-init");

        latent_ = TokenGrid(cfg_.grid_height, cfg_.grid_width, cfg_.noise_channels);
        Rng latent_rng = root.substream("latent");
        for (double& v : latent_.data) v = latent_rng.normal();

        if (cfg_.model == ModelKind::ToyTransformer) {
            model_  = ToyDiT::build(cfg_, root.substream("weights"));
            caches_ = model_->make_caches(cfg_.image_tokens());
        } else {
            target_ = TokenGrid(cfg_.grid_height, cfg_.grid_width,
                                cfg_.noise_channels);
            Rng target_rng = root.substream("target");
            for (double& v : target_->data) v = target_rng.normal();
        }
        tracker_ = FrequencyTracker(cfg_.ewma_decay, cfg_.image_tokens());
    }

    bool done() const { return next_step_ > cfg_.total_steps; }
    int next_step() const { return next_step_; }

    const RunConfig& config() const { return cfg_; }
    const TokenGrid& latent() const { return latent_; }
    const DenoiserCaches& caches() const { return caches_; }
    const std::optional<ClusterModel>& clusters() const { return clusters_; }
    const FrequencyTracker& tracker() const { return tracker_; }
    const std::vector<StepTrace>& traces() const { return traces_; }

    void run_step() {
        if (done()) throw state_error("run_step: sampling already finished");
        const auto t_start = std::chrono::steady_clock::now();

        const int t  = next_step_;
        const int n  = cfg_.image_tokens();
        const bool warm = force_full_ || t <= cfg_.warmup_steps;

        StepTrace trace;
        trace.step   = t;
        trace.pruned = !warm;

        TokenGrid noise;
        if (warm) {
            trace.selected = TokenIndexSet::all(n);
            trace.budget   = n;
            noise          = evaluate(trace.selected, /*full=*/true);
        } else {
            select_tokens(t, trace);
            noise    = evaluate(trace.selected, /*full=*/false);
            tracker_ = ewma_update(tracker_, trace.selected, t);
            trace.freq = tracker_.f;
        }

        if (t == cfg_.warmup_steps) {
            noise_ref_ = noise;
            if (model_) caches_.noise_ref = noise;
        }

        trace.rn_norms.assign(n, 0.0);
        if (noise_ref_) {
            trace.rn_norms = token_norms(relative_noise(noise, *noise_ref_));
        }

        const double dt = 1.0 / cfg_.total_steps;
        for (std::size_t i = 0; i < latent_.data.size(); ++i) {
            latent_.data[i] -= dt * noise.data[i];
        }

        noise_prev_ = noise;
        trace.noise = std::move(noise);
        traces_.push_back(std::move(trace));
        ++next_step_;

        step_ms_.push_back(std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t_start)
                               .count());
    }

    RunResult finish() {
        while (!done()) run_step();
        RunResult r;
        r.config       = cfg_;
        r.forced_full  = force_full_;
        r.final_latent = latent_;
        r.steps        = std::move(traces_);
        r.clusters     = std::move(clusters_);
        r.tracker      = std::move(tracker_);
        r.step_ms      = std::move(step_ms_);
        return r;
    }

  private:
    TokenGrid evaluate(const TokenIndexSet& selected, bool full) {
        if (model_) {
            return model_->predict_noise(latent_, selected, full, caches_);
        }
        // Smooth synthetic denoiser: noise is the displacement from a fixed
        // target, and unselected rows reuse the previous prediction.
        TokenGrid noise = full ? TokenGrid(latent_.height, latent_.width,
                                           latent_.channels)
                               : noise_prev_;
        const TokenIndexSet rows =
            full ? TokenIndexSet::all(latent_.tokens()) : selected;
        for (int id : rows.ids()) {
            const double* x = latent_.token_ptr(id);
            const double* g = target_->token_ptr(id);
            double* o       = noise.token_ptr(id);
            for (int c = 0; c < latent_.channels; ++c) o[c] = x[c] - g[c];
        }
        return noise;
    }

    void select_tokens(int t, StepTrace& trace) {
        const int m = cfg_.token_budget();
        trace.budget = m;
        switch (cfg_.strategy) {
            case SelectionStrategy::FullCat: {
                FindResult fr = find_indices(
                    t, cfg_.warmup_steps, noise_prev_, *noise_ref_,
                    clusters_ ? &*clusters_ : nullptr, tracker_,
                    SelectorParams::from(cfg_), kmeans_rng_);
                if (fr.built) clusters_ = std::move(fr.built);
                trace.stale_quota =
                    t == cfg_.warmup_steps + 1 ? 0 : cfg_.stale_budget(m);
                trace.selected = std::move(fr.selected);
                break;
            }
            case SelectionStrategy::NoiseOnly: {
                const TokenGrid rn = relative_noise(noise_prev_, *noise_ref_);
                trace.selected     = select_noise_only(token_norms(rn), m);
                break;
            }
            case SelectionStrategy::NoiseStaleness: {
                const TokenGrid rn = relative_noise(noise_prev_, *noise_ref_);
                const int m_stale =
                    t == cfg_.warmup_steps + 1 ? 0 : cfg_.stale_budget(m);
                trace.stale_quota = m_stale;
                trace.selected    = select_noise_staleness(token_norms(rn),
                                                           tracker_, m, m_stale);
                break;
            }
            case SelectionStrategy::SequentialRows: {
                trace.selected = select_sequential_rows(
                    cfg_.grid_height, cfg_.grid_width, t - cfg_.warmup_steps);
                trace.budget = trace.selected.size();
                break;
            }
        }
    }

    RunConfig cfg_;
    bool force_full_ = false;
    int next_step_   = 1;

    std::optional<ToyDiT> model_;
    std::optional<TokenGrid> target_;
    DenoiserCaches caches_;
    Rng kmeans_rng_{0};

    TokenGrid latent_;
    TokenGrid noise_prev_;
    std::optional<TokenGrid> noise_ref_;
    std::optional<ClusterModel> clusters_;
    FrequencyTracker tracker_;
    std::vector<StepTrace> traces_;
    std::vector<double> step_ms_;
};

inline RunResult sample(const RunConfig& cfg, bool force_full = false) {
    return Pipeline(cfg, force_full).finish();
}

struct CompareResult {
    RunResult full;
    RunResult pruned;
    Fidelity fid;
};

// Shared-seed A/B: the reference full run against the configured strategy.
inline CompareResult compare_runs(const RunConfig& cfg) {
    CompareResult c;
    c.full   = sample(cfg, /*force_full=*/true);
    c.pruned = sample(cfg, /*force_full=*/false);
    c.fid    = fidelity(c.full.final_latent, c.pruned.final_latent);
    return c;
}

inline nlohmann::ordered_json config_json(const RunConfig& c) {
    return nlohmann::ordered_json{
        {"total_steps", c.total_steps},
        {"warmup_steps", c.warmup_steps},
        {"alpha", c.alpha},
        {"cluster_count", c.cluster_count},
        {"ewma_decay", c.ewma_decay},
        {"stale_fraction", c.stale_fraction},
        {"pos_weight", c.pos_weight},
        {"neighbor_mix", c.neighbor_mix},
        {"intra_balance", c.intra_balance},
        {"kmeans_max_iters", c.kmeans_max_iters},
        {"seed", c.seed},
        {"grid_height", c.grid_height},
        {"grid_width", c.grid_width},
        {"noise_channels", c.noise_channels},
        {"layers", c.layers},
        {"model_width", c.model_width},
        {"heads", c.heads},
        {"mlp_ratio", c.mlp_ratio},
        {"text_tokens", c.text_tokens},
        {"model", to_string(c.model)},
        {"strategy", to_string(c.strategy)},
    };
}

inline nlohmann::ordered_json run_report_json(const RunResult& r,
                                              bool include_timings) {
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    std::vector<TokenGrid> noise_fields;
    noise_fields.reserve(r.steps.size());
    for (const StepTrace& s : r.steps) noise_fields.push_back(s.noise);
    std::vector<StepCorrelation> corr;
    if (static_cast<int>(noise_fields.size()) > r.config.warmup_steps + 1) {
        corr = step_correlation(noise_fields, r.config.warmup_steps);
    }
    auto corr_for = [&corr](int step) -> nlohmann::ordered_json {
        for (const StepCorrelation& sc : corr) {
            if (sc.step == step) {
                if (sc.r) return *sc.r;
                return nullptr;
            }
        }
        return nullptr;
    };

    std::vector<TokenIndexSet> pruned_selections;
    for (const StepTrace& s : r.steps) {
        steps.push_back({
            {"step", s.step},
            {"pruned", s.pruned},
            {"selected_count", s.selected.size()},
            {"stale_quota", s.stale_quota},
            {"rn_correlation", corr_for(s.step)},
        });
        if (s.pruned) pruned_selections.push_back(s.selected);
    }

    const CostModel cost = CostModel::from(r.config);
    nlohmann::ordered_json j{
        {"schema_version", 1},
        {"config", config_json(r.config)},
        {"forced_full", r.forced_full},
        {"steps", steps},
        {"macs",
         {{"full_step", cost.full_step_macs()},
          {"pruned_step", cost.pruned_step_macs()},
          {"total", cost.total_macs()},
          {"ratio_vs_full", r.forced_full ? 1.0 : cost.ratio_vs_full()}}},
        {"selection_histogram",
         selection_histogram(pruned_selections, r.config.image_tokens())},
        {"final_latent_hash", r.final_latent_hash()},
    };
    j["timings_ms"] = nullptr;
    if (include_timings) j["timings_ms"] = r.step_ms;
    return j;
}

// cmd_run artifact layout: selection_masks/, noise_norm/, clusters.pgm,
// metrics.json, final_latent.bin under the output directory.
inline void export_run(const RunResult& r, const ExperimentConfig& ec) {
    namespace fs = std::filesystem;
    const fs::path root(ec.out_dir);
    std::error_code err;
    fs::create_directories(root, err);
    if (err) throw io_error("cannot create output directory: " + root.string());

    char name[64];
    if (ec.export_masks) {
        fs::create_directories(root / "selection_masks", err);
        if (err) throw io_error("cannot create selection_masks directory");
        for (const StepTrace& s : r.steps) {
            std::snprintf(name, sizeof(name), "step_%03d.pgm", s.step);
            write_pgm(root / "selection_masks" / name,
                      selection_mask_image(s.selected, r.config.grid_height,
                                           r.config.grid_width));
        }
    }
    if (ec.export_noise_csv) {
        fs::create_directories(root / "noise_norm", err);
        if (err) throw io_error("cannot create noise_norm directory");
        std::vector<double> zero(r.config.image_tokens(), 0.0);
        for (const StepTrace& s : r.steps) {
            std::snprintf(name, sizeof(name), "step_%03d.csv", s.step);
            write_noise_csv(root / "noise_norm" / name, s.rn_norms,
                            s.freq.empty() ? zero : s.freq);
        }
    }
    if (r.clusters) {
        write_pgm(root / "clusters.pgm",
                  cluster_image(r.clusters->assignment, r.config.grid_height,
                                r.config.grid_width, r.clusters->k));
    }
    if (ec.export_latent) {
        write_latent_bin(root / "final_latent.bin", r.final_latent,
                         r.config.total_steps);
    }
    detail::write_file(root / "metrics.json",
                       run_report_json(r, ec.export_timings).dump(2) + "\n");
}

}  // namespace catprune
