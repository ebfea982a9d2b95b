#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "catprune/config.hpp"
#include "catprune/grid.hpp"

namespace catprune {

struct undefined_correlation : std::domain_error {
    using std::domain_error::domain_error;
};

// How the pruned path accounts for K/V projections: recompute only the
// selected rows (the cache serves the rest), or recompute all rows each step.
enum class KvVariant { PruneSelected, RecomputeAll };

// Analytic multiply-accumulate counts for the transformer stack. Terms per
// layer at sequence length L: Q/K/V projections 3Ld^2, output projection Ld^2,
// MLP 2rLd^2, attention score and value products L^2 d each. Pruned steps
// shrink the row dimension to alpha * image tokens + all text tokens.
struct CostModel {
    int layers       = 4;
    int d_model      = 64;
    int mlp_ratio    = 4;
    int image_tokens = 1024;
    int text_tokens  = 128;
    int total_steps  = 28;
    int warmup_steps = 8;
    double alpha     = 0.3;
    KvVariant variant = KvVariant::PruneSelected;

    static CostModel from(const RunConfig& cfg) {
        CostModel c;
        c.layers       = cfg.layers;
        c.d_model      = cfg.model_width;
        c.mlp_ratio    = cfg.mlp_ratio;
        c.image_tokens = cfg.image_tokens();
        c.text_tokens  = cfg.text_tokens;
        c.total_steps  = cfg.total_steps;
        c.warmup_steps = cfg.warmup_steps;
        c.alpha        = cfg.alpha;
        return c;
    }

    double seq_len() const { return image_tokens + text_tokens; }

    // Active-row fraction on a pruned step.
    double row_scale() const {
        return (alpha * image_tokens + text_tokens) / seq_len();
    }

    double full_step_macs() const {
        const double L = seq_len();
        const double d = d_model;
        const double token_linear = (4.0 + 2.0 * mlp_ratio) * L * d * d;
        const double attention    = 2.0 * L * L * d;
        return layers * (token_linear + attention);
    }

    double pruned_step_macs() const {
        const double L = seq_len();
        const double d = d_model;
        const double s = row_scale();
        const double qkv = variant == KvVariant::PruneSelected
                               ? 3.0 * s * L * d * d
                               : (1.0 * s + 2.0) * L * d * d;
        const double rest      = (1.0 + 2.0 * mlp_ratio) * s * L * d * d;
        const double attention = 2.0 * (s * L) * L * d;
        return layers * (qkv + rest + attention);
    }

    double total_macs() const {
        return warmup_steps * full_step_macs() +
               (total_steps - warmup_steps) * pruned_step_macs();
    }

    double ratio_vs_full() const {
        return total_macs() / (total_steps * full_step_macs());
    }
};

// Sample Pearson correlation; refuses degenerate inputs instead of emitting
// NaN so callers can flag them.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("pearson: need two equal-length vectors, n >= 2");
    }
    const int n = static_cast<int>(x.size());
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw undefined_correlation("pearson: zero variance input");
    }
    return sxy / std::sqrt(sxx * syy);
}

struct StepCorrelation {
    int step = 0;
    std::optional<double> r;  // empty when either norm field is constant
};

// Per-step correlation between the current and previous relative-noise norms,
// computed over tokens, for steps t0+2 .. N. `noise[t-1]` must hold the noise
// field of step t (1-based steps).
inline std::vector<StepCorrelation> step_correlation(
    const std::vector<TokenGrid>& noise, int t0) {
    const int n_steps = static_cast<int>(noise.size());
    if (t0 < 1 || t0 + 1 >= n_steps) {
        throw std::invalid_argument("step_correlation: need steps beyond t0+1");
    }
    const TokenGrid& ref = noise[t0 - 1];
    std::vector<StepCorrelation> out;
    for (int step = t0 + 2; step <= n_steps; ++step) {
        TokenGrid cur  = noise[step - 1];
        TokenGrid prev = noise[step - 2];
        if (!cur.same_shape(ref) || !prev.same_shape(ref)) {
            throw std::invalid_argument("step_correlation: inconsistent shapes");
        }
        for (std::size_t i = 0; i < cur.data.size(); ++i) {
            cur.data[i] -= ref.data[i];
            prev.data[i] -= ref.data[i];
        }
        StepCorrelation sc;
        sc.step = step;
        try {
            sc.r = pearson(token_norms(cur), token_norms(prev));
        } catch (const undefined_correlation&) {
            sc.r = std::nullopt;
        }
        out.push_back(sc);
    }
    return out;
}

struct Fidelity {
    double mse     = 0.0;
    double psnr_db = std::numeric_limits<double>::infinity();
    double max_abs = 0.0;
};

// MSE / PSNR / max-abs difference between two latents; PSNR peak is the
// reference's dynamic range (max - min), so identical inputs give +inf.
inline Fidelity fidelity(const TokenGrid& reference, const TokenGrid& candidate) {
    if (!reference.same_shape(candidate)) {
        throw std::invalid_argument("fidelity: shape mismatch");
    }
    Fidelity f;
    double lo = reference.data[0], hi = reference.data[0];
    for (std::size_t i = 0; i < reference.data.size(); ++i) {
        const double d = candidate.data[i] - reference.data[i];
        f.mse += d * d;
        f.max_abs = std::max(f.max_abs, std::abs(d));
        lo = std::min(lo, reference.data[i]);
        hi = std::max(hi, reference.data[i]);
    }
    f.mse /= static_cast<double>(reference.data.size());
    const double range = hi - lo;
    if (f.mse > 0.0 && range > 0.0) {
        f.psnr_db = 10.0 * std::log10(range * range / f.mse);
    }
    return f;
}

// Times each token appeared in a selection, over the given step list.
inline std::vector<int> selection_histogram(
    const std::vector<TokenIndexSet>& selections, int tokens) {
    std::vector<int> counts(tokens, 0);
    for (const TokenIndexSet& s : selections) {
        for (int id : s.ids()) {
            if (id >= tokens) {
                throw std::invalid_argument("selection_histogram: id out of range");
            }
            ++counts[id];
        }
    }
    return counts;
}

}  // namespace catprune
