#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "catprune/clustering.hpp"
#include "catprune/config.hpp"
#include "catprune/grid.hpp"
#include "catprune/rng.hpp"

namespace catprune {

// Change of the predicted noise since the reference step, element-wise.
inline TokenGrid relative_noise(const TokenGrid& n_t, const TokenGrid& n_ref) {
    if (!n_t.same_shape(n_ref)) {
        throw std::invalid_argument("relative_noise: shape mismatch");
    }
    TokenGrid out = n_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= n_ref.data[i];
    return out;
}

// Decayed per-token selection count: f <- decay*f + 1 for selected tokens,
// f <- decay*f otherwise. A token has f == 0 exactly until its first pick.
struct FrequencyTracker {
    double decay = 0.9;
    std::vector<double> f;
    std::vector<int> last_selected;  // step of most recent pick, -1 = never

    FrequencyTracker() = default;
    FrequencyTracker(double a, int tokens) : decay(a) {
        if (!(a > 0.0 && a < 1.0)) {
            throw std::invalid_argument("FrequencyTracker: decay must be in (0,1)");
        }
        if (tokens < 1) {
            throw std::invalid_argument("FrequencyTracker: need at least one token");
        }
        f.assign(tokens, 0.0);
        last_selected.assign(tokens, -1);
    }

    int tokens() const { return static_cast<int>(f.size()); }
};

inline FrequencyTracker ewma_update(const FrequencyTracker& tracker,
                                    const TokenIndexSet& selected, int step) {
    FrequencyTracker out = tracker;
    for (double& v : out.f) v *= out.decay;
    for (int id : selected.ids()) {
        out.f[id] += 1.0;
        out.last_selected[id] = step;
    }
    return out;
}

// The m_stale least-frequently-selected tokens outside `exclude`, ties toward
// the lower token index.
inline TokenIndexSet stale_candidates(const FrequencyTracker& tracker,
                                      const TokenIndexSet& exclude, int m_stale) {
    const int n = tracker.tokens();
    std::vector<int> pool;
    pool.reserve(n - exclude.size());
    for (int t = 0; t < n; ++t) {
        if (!exclude.contains(t)) pool.push_back(t);
    }
    if (m_stale < 0 || m_stale > static_cast<int>(pool.size())) {
        throw std::invalid_argument("stale_candidates: m_stale exceeds available tokens");
    }
    std::partial_sort(pool.begin(), pool.begin() + m_stale, pool.end(),
                      [&](int a, int b) {
                          if (tracker.f[a] != tracker.f[b]) return tracker.f[a] < tracker.f[b];
                          return a < b;
                      });
    pool.resize(m_stale);
    return TokenIndexSet::of_unsorted(std::move(pool), n);
}

struct SelectorParams {
    double alpha          = 0.3;
    double stale_fraction = 0.25;
    int cluster_count     = 20;
    double pos_weight     = 1.0;
    double neighbor_mix   = 0.5;
    double intra_balance  = 0.5;
    int kmeans_max_iters  = 50;

    static SelectorParams from(const RunConfig& cfg) {
        SelectorParams p;
        p.alpha          = cfg.alpha;
        p.stale_fraction = cfg.stale_fraction;
        p.cluster_count  = cfg.cluster_count;
        p.pos_weight     = cfg.pos_weight;
        p.neighbor_mix   = cfg.neighbor_mix;
        p.intra_balance  = cfg.intra_balance;
        p.kmeans_max_iters = cfg.kmeans_max_iters;
        return p;
    }
};

namespace detail {

// Fraction of values strictly below each entry; single-element sets rank 0.
inline std::vector<double> rank_normalized(const std::vector<double>& values) {
    const int n = static_cast<int>(values.size());
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return values[a] < values[b]; });
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        for (int p = i; p < j; ++p) {
            out[order[p]] = static_cast<double>(i) / (n - 1);
        }
        i = j;
    }
    return out;
}

}  // namespace detail

struct FindResult {
    TokenIndexSet selected;
    std::optional<ClusterModel> built;  // populated only on the clustering step
};

// One selection round. On the first pruned step (t0+1) this clusters the
// feature field and returns the model for the caller to freeze; afterwards the
// frozen model must be supplied. Cluster scores are re-pooled every step from
// the current relative noise. The pick is (budget - stale quota) tokens from
// the top-scored clusters, each cluster contributing its share of tokens
// ranked by rank(|rn|) - intra_balance * rank(f), then the stale quota of
// least-frequent leftovers. Quota shares that exceed a cluster's size spill to
// the next cluster in score order.
inline FindResult find_indices(int step, int t0, const TokenGrid& noise,
                               const TokenGrid& noise_ref,
                               const ClusterModel* frozen,
                               const FrequencyTracker& tracker,
                               const SelectorParams& params, Rng kmeans_rng) {
    if (step <= t0) {
        throw std::invalid_argument("find_indices: step must be past the warmup");
    }
    const bool cluster_step = (step == t0 + 1);
    if (!cluster_step && frozen == nullptr) {
        throw state_error("find_indices: no cluster model frozen at t0+1");
    }

    const TokenGrid rn = relative_noise(noise, noise_ref);
    const int n = rn.tokens();
    if (tracker.tokens() != n) {
        throw std::invalid_argument("find_indices: tracker size mismatch");
    }
    const PositionalEncoding pe(rn.height, rn.width, rn.channels);
    const std::vector<double> features = build_features(rn, pe, params.pos_weight);

    FindResult result;
    const ClusterModel* model = frozen;
    if (cluster_step) {
        ClusterModel fresh = kmeans(features, n, rn.channels, params.cluster_count,
                                    kmeans_rng, params.kmeans_max_iters);
        fresh.adjacency = cluster_adjacency(fresh.assignment, rn.height, rn.width,
                                            fresh.k);
        fresh.frozen_at = step;
        result.built    = std::move(fresh);
        model           = &*result.built;
    }

    const int m       = round_half_up(params.alpha * n);
    const int m_stale = cluster_step ? 0 : round_half_up(params.stale_fraction * m);
    const int cluster_budget = m - m_stale;
    const int m_clusters = std::clamp(
        static_cast<int>(std::ceil(params.alpha * model->k)), 1, model->k);

    const std::vector<double> scores =
        graph_pool(*model, features, params.neighbor_mix);
    const std::vector<int> ranked    = top_clusters(scores, model->k);
    const std::vector<double> norms  = token_norms(rn);

    // Even split across the chosen clusters, remainder to the higher-scored
    // ones; shortfalls carry down the ranked list so the budget always lands.
    std::vector<int> want(model->k, 0);
    {
        const int base = cluster_budget / m_clusters;
        const int rem  = cluster_budget % m_clusters;
        for (int i = 0; i < m_clusters; ++i) want[i] = base + (i < rem ? 1 : 0);
    }

    const std::vector<std::vector<int>> members = model->members();

    // Resolve how many tokens each ranked cluster contributes. A cluster
    // smaller than its share spills the surplus to the next ranked cluster;
    // surplus still unplaced after the last cluster wraps around to clusters
    // with spare members, so the budget always lands (m never exceeds n).
    std::vector<int> take(model->k, 0);
    int placed = 0;
    int carry  = 0;
    for (int i = 0; i < model->k; ++i) {
        const int avail = static_cast<int>(members[ranked[i]].size());
        const int grab  = std::min(want[i] + carry, avail);
        take[i] = grab;
        placed += grab;
        carry   = want[i] + carry - grab;
    }
    for (int i = 0; placed < cluster_budget; i = (i + 1) % model->k) {
        const int spare = static_cast<int>(members[ranked[i]].size()) - take[i];
        const int grab  = std::min(cluster_budget - placed, spare);
        take[i] += grab;
        placed  += grab;
    }

    std::vector<int> picks;
    picks.reserve(m);
    for (int i = 0; i < model->k; ++i) {
        const int cid    = ranked[i];
        const auto& toks = members[cid];
        if (take[i] == 0) continue;

        std::vector<double> member_norm(toks.size()), member_freq(toks.size());
        for (std::size_t j = 0; j < toks.size(); ++j) {
            member_norm[j] = norms[toks[j]];
            member_freq[j] = tracker.f[toks[j]];
        }
        const std::vector<double> rank_n = detail::rank_normalized(member_norm);
        const std::vector<double> rank_f = detail::rank_normalized(member_freq);
        std::vector<int> order(toks.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double sa = rank_n[a] - params.intra_balance * rank_f[a];
            const double sb = rank_n[b] - params.intra_balance * rank_f[b];
            if (sa != sb) return sa > sb;
            return toks[a] < toks[b];
        });
        for (int j = 0; j < take[i]; ++j) picks.push_back(toks[order[j]]);
    }

    TokenIndexSet from_clusters = TokenIndexSet::of_unsorted(std::move(picks), n);
    if (m_stale == 0) {
        result.selected = std::move(from_clusters);
        return result;
    }
    const TokenIndexSet stale = stale_candidates(tracker, from_clusters, m_stale);
    std::vector<int> merged   = from_clusters.ids();
    const auto& extra         = stale.ids();
    merged.insert(merged.end(), extra.begin(), extra.end());
    result.selected = TokenIndexSet::of_unsorted(std::move(merged), n);
    return result;
}

// Ablation pick: top tokens by relative-noise norm alone.
inline TokenIndexSet select_noise_only(const std::vector<double>& rn_norms, int m) {
    return top_k_indices(rn_norms, m);
}

// Ablation pick: noise ranking plus a stale quota, no clustering.
inline TokenIndexSet select_noise_staleness(const std::vector<double>& rn_norms,
                                            const FrequencyTracker& tracker,
                                            int m, int m_stale) {
    if (m_stale > m) {
        throw std::invalid_argument("select_noise_staleness: stale quota exceeds budget");
    }
    TokenIndexSet head = top_k_indices(rn_norms, m - m_stale);
    if (m_stale == 0) return head;
    const TokenIndexSet stale = stale_candidates(tracker, head, m_stale);
    std::vector<int> merged   = head.ids();
    const auto& extra         = stale.ids();
    merged.insert(merged.end(), extra.begin(), extra.end());
    return TokenIndexSet::of_unsorted(std::move(merged),
                                      static_cast<int>(rn_norms.size()));
}

// Naive baseline: pruned step t touches grid rows 2t-1 and 2t (1-based),
// wrapping when the sweep passes the bottom of the grid.
inline TokenIndexSet select_sequential_rows(int h, int w, int pruned_step) {
    if (pruned_step < 1) {
        throw std::invalid_argument("select_sequential_rows: pruned_step starts at 1");
    }
    const int r0 = (2 * pruned_step - 2) % h;
    const int r1 = (2 * pruned_step - 1) % h;
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(w) * (r0 == r1 ? 1 : 2));
    for (int j = 0; j < w; ++j) ids.push_back(r0 * w + j);
    if (r1 != r0) {
        for (int j = 0; j < w; ++j) ids.push_back(r1 * w + j);
    }
    return TokenIndexSet::of_unsorted(std::move(ids), h * w);
}

}  // namespace catprune
