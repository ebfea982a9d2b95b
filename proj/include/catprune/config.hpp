#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace catprune {

enum class ModelKind { ToyTransformer, SyntheticSmooth };

enum class SelectionStrategy { FullCat, NoiseOnly, NoiseStaleness, SequentialRows };

inline std::string to_string(ModelKind m) {
    switch (m) {
        case ModelKind::ToyTransformer: return "toy-transformer";
        case ModelKind::SyntheticSmooth: return "synthetic-smooth";
    }
    return "?";
}

inline std::string to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::FullCat: return "full-cat";
        case SelectionStrategy::NoiseOnly: return "noise-only";
        case SelectionStrategy::NoiseStaleness: return "noise-staleness";
        case SelectionStrategy::SequentialRows: return "sequential-rows";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "toy-transformer") return ModelKind::ToyTransformer;
    if (s == "synthetic-smooth") return ModelKind::SyntheticSmooth;
    throw std::invalid_argument("unknown model '" + std::string(s) +
                                "' (expected toy-transformer or synthetic-smooth)");
}

inline SelectionStrategy parse_strategy(std::string_view s) {
    if (s == "full-cat") return SelectionStrategy::FullCat;
    if (s == "noise-only") return SelectionStrategy::NoiseOnly;
    if (s == "noise-staleness") return SelectionStrategy::NoiseStaleness;
    if (s == "sequential-rows") return SelectionStrategy::SequentialRows;
    throw std::invalid_argument("unknown mode '" + std::string(s) +
                                "' (expected full-cat, noise-only, noise-staleness "
                                "or sequential-rows)");
}

// Round-half-up; all token budgets use this rule.
inline int round_half_up(double x) {
    return static_cast<int>(std::floor(x + 0.5));
}

struct RunConfig {
    int total_steps  = 28;   // N
    int warmup_steps = 8;    // t0: the last step that still runs at full size
    double alpha     = 0.3;  // fraction of image tokens recomputed per pruned step

    int cluster_count     = 20;
    double ewma_decay     = 0.9;
    double stale_fraction = 0.25;  // share of the budget reserved for stale tokens
    double pos_weight     = 1.0;   // positional-encoding weight in cluster features
    double neighbor_mix   = 0.5;   // neighbor share in pooled cluster scores
    double intra_balance  = 0.5;   // frequency penalty inside each cluster
    int kmeans_max_iters  = 50;

    std::uint64_t seed = 0;

    int grid_height    = 32;
    int grid_width     = 32;
    int noise_channels = 8;

    int layers      = 4;
    int model_width = 64;
    int heads       = 4;
    int mlp_ratio   = 4;
    int text_tokens = 128;  // always-selected rows prepended to the sequence

    ModelKind model            = ModelKind::ToyTransformer;
    SelectionStrategy strategy = SelectionStrategy::FullCat;

    int image_tokens() const { return grid_height * grid_width; }
    int sequence_length() const { return text_tokens + image_tokens(); }
    int token_budget() const { return round_half_up(alpha * image_tokens()); }
    int stale_budget(int budget) const { return round_half_up(stale_fraction * budget); }

    void validate() const {
        auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
        if (total_steps < 2) fail("total_steps: must be >= 2");
        if (warmup_steps < 1 || warmup_steps >= total_steps)
            fail("warmup_steps: need 1 <= warmup < total_steps");
        if (!(alpha > 0.0) || alpha > 1.0) fail("alpha: need 0 < alpha <= 1");
        if (grid_height < 1) fail("grid_height: must be >= 1");
        if (grid_width < 1) fail("grid_width: must be >= 1");
        if (cluster_count < 2 || cluster_count > image_tokens())
            fail("cluster_count: need 2 <= clusters <= grid tokens");
        if (!(ewma_decay > 0.0) || !(ewma_decay < 1.0))
            fail("ewma_decay: need 0 < decay < 1");
        if (stale_fraction < 0.0 || stale_fraction >= 1.0)
            fail("stale_fraction: need 0 <= fraction < 1");
        if (pos_weight < 0.0) fail("pos_weight: must be >= 0");
        if (neighbor_mix < 0.0 || neighbor_mix > 1.0)
            fail("neighbor_mix: need 0 <= mix <= 1");
        if (intra_balance < 0.0) fail("intra_balance: must be >= 0");
        if (kmeans_max_iters < 1) fail("kmeans_max_iters: must be >= 1");
        if (noise_channels < 2 || noise_channels % 2 != 0)
            fail("noise_channels: must be even and >= 2");
        if (layers < 1) fail("layers: must be >= 1");
        if (model_width < 1) fail("model_width: must be >= 1");
        if (heads < 1 || model_width % heads != 0)
            fail("heads: must divide model_width");
        if (mlp_ratio < 1) fail("mlp_ratio: must be >= 1");
        if (text_tokens < 0) fail("text_tokens: must be >= 0");
    }
};

}  // namespace catprune
