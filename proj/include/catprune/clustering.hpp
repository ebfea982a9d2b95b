#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "catprune/grid.hpp"
#include "catprune/rng.hpp"

namespace catprune {

// Spatial encoding per token: the first dim/2 components carry i/h, the rest
// j/w, for cell (i, j). Requires an even dim so the halves split cleanly.
struct PositionalEncoding {
    int height = 0;
    int width  = 0;
    int dim    = 0;
    std::vector<double> values;  // (h*w) x dim

    PositionalEncoding(int h, int w, int d)
        : height(h), width(w), dim(d) {
        if (h < 1 || w < 1) {
            throw std::invalid_argument("PositionalEncoding: grid dims must be >= 1");
        }
        if (d < 2 || d % 2 != 0) {
            throw std::invalid_argument("PositionalEncoding: dim must be even and >= 2");
        }
        values.resize(static_cast<std::size_t>(h) * w * d);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                double* row = values.data() + static_cast<std::size_t>(i * w + j) * d;
                const double ri = static_cast<double>(i) / h;
                const double rj = static_cast<double>(j) / w;
                for (int c = 0; c < d / 2; ++c) row[c] = ri;
                for (int c = d / 2; c < d; ++c) row[c] = rj;
            }
        }
    }

    double at(int token, int c) const {
        return values[static_cast<std::size_t>(token) * dim + c];
    }
    const double* row(int token) const {
        return values.data() + static_cast<std::size_t>(token) * dim;
    }
};

struct ClusterModel {
    int k         = 0;
    int dim       = 0;
    int frozen_at = -1;                    // step the model was built at
    std::vector<int> assignment;           // token -> cluster id
    std::vector<double> centroids;         // k x dim
    std::vector<std::uint8_t> adjacency;   // k x k, symmetric, zero diagonal

    bool adjacent(int a, int b) const {
        return adjacency[static_cast<std::size_t>(a) * k + b] != 0;
    }

    std::vector<int> sizes() const {
        std::vector<int> s(k, 0);
        for (int c : assignment) ++s[c];
        return s;
    }

    // Member token ids per cluster, ascending within each cluster.
    std::vector<std::vector<int>> members() const {
        std::vector<std::vector<int>> m(k);
        for (int t = 0; t < static_cast<int>(assignment.size()); ++t) {
            m[assignment[t]].push_back(t);
        }
        return m;
    }

    bool operator==(const ClusterModel&) const = default;
};

// Clustering features: per-channel variance-normalized relative noise plus
// weighted positional encoding. Zero-variance channels pass through unscaled.
inline std::vector<double> build_features(const TokenGrid& rn,
                                          const PositionalEncoding& pe,
                                          double pos_weight) {
    if (rn.height != pe.height || rn.width != pe.width || rn.channels != pe.dim) {
        throw std::invalid_argument("build_features: grid/encoding shape mismatch");
    }
    const int n = rn.tokens();
    const int d = rn.channels;
    std::vector<double> scale(d, 1.0);
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int t = 0; t < n; ++t) mean += rn.at(t, c);
        mean /= n;
        double var = 0.0;
        for (int t = 0; t < n; ++t) {
            const double dv = rn.at(t, c) - mean;
            var += dv * dv;
        }
        var /= n;
        if (var > 0.0) scale[c] = 1.0 / std::sqrt(var);
    }
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    for (int t = 0; t < n; ++t) {
        for (int c = 0; c < d; ++c) {
            out[static_cast<std::size_t>(t) * d + c] =
                rn.at(t, c) * scale[c] + pos_weight * pe.at(t, c);
        }
    }
    return out;
}

namespace detail {

inline double dist2(const double* a, const double* b, int d) {
    double acc = 0.0;
    for (int c = 0; c < d; ++c) {
        const double dv = a[c] - b[c];
        acc += dv * dv;
    }
    return acc;
}

}  // namespace detail

// Lloyd iterations with L2 distance and k-means++ initialization. Stops when
// the assignment is stable or after max_iters rounds. Empty clusters steal the
// point currently farthest from its centroid. When inertia_log is given, the
// inertia after each round's centroid update is appended to it.
inline ClusterModel kmeans(const std::vector<double>& features, int n, int dim,
                           int k, Rng rng, int max_iters = 50,
                           std::vector<double>* inertia_log = nullptr) {
    if (n < 1 || dim < 1) {
        throw std::invalid_argument("kmeans: empty input");
    }
    if (k < 1 || k > n) {
        throw std::invalid_argument("kmeans: need 1 <= k <= point count");
    }
    if (features.size() != static_cast<std::size_t>(n) * dim) {
        throw std::invalid_argument("kmeans: feature buffer size mismatch");
    }
    auto point = [&](int t) { return features.data() + static_cast<std::size_t>(t) * dim; };

    ClusterModel model;
    model.k   = k;
    model.dim = dim;
    model.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);
    auto centroid = [&](int c) {
        return model.centroids.data() + static_cast<std::size_t>(c) * dim;
    };

    // k-means++ seeding.
    {
        const int first = static_cast<int>(rng.below(n));
        std::copy(point(first), point(first) + dim, centroid(0));
        std::vector<double> d2(n);
        for (int t = 0; t < n; ++t) d2[t] = detail::dist2(point(t), centroid(0), dim);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (double v : d2) total += v;
            int chosen = -1;
            if (total > 0.0) {
                const double u = rng.uniform01() * total;
                double acc     = 0.0;
                for (int t = 0; t < n; ++t) {
                    acc += d2[t];
                    if (u < acc) {
                        chosen = t;
                        break;
                    }
                }
                if (chosen < 0) chosen = n - 1;
            } else {
                chosen = static_cast<int>(rng.below(n));
            }
            std::copy(point(chosen), point(chosen) + dim, centroid(c));
            for (int t = 0; t < n; ++t) {
                d2[t] = std::min(d2[t], detail::dist2(point(t), centroid(c), dim));
            }
        }
    }

    model.assignment.assign(n, -1);
    std::vector<int> sizes(k, 0);
    std::vector<double> cur_d2(n, 0.0);

    for (int iter = 0; iter < max_iters; ++iter) {
        // Assign step: nearest centroid, ties toward the lower cluster id.
        bool changed = false;
        std::fill(sizes.begin(), sizes.end(), 0);
        for (int t = 0; t < n; ++t) {
            int best    = 0;
            double bd   = detail::dist2(point(t), centroid(0), dim);
            for (int c = 1; c < k; ++c) {
                const double d = detail::dist2(point(t), centroid(c), dim);
                if (d < bd) {
                    bd   = d;
                    best = c;
                }
            }
            if (model.assignment[t] != best) changed = true;
            model.assignment[t] = best;
            cur_d2[t]           = bd;
            ++sizes[best];
        }

        // Repair: hand each empty cluster the point farthest from its centroid.
        for (int e = 0; e < k; ++e) {
            if (sizes[e] != 0) continue;
            int steal   = -1;
            double best = -1.0;
            for (int t = 0; t < n; ++t) {
                if (sizes[model.assignment[t]] < 2) continue;
                if (cur_d2[t] > best) {
                    best  = cur_d2[t];
                    steal = t;
                }
            }
            if (steal < 0) break;  // k > distinct points; leave as-is
            --sizes[model.assignment[steal]];
            model.assignment[steal] = e;
            ++sizes[e];
            cur_d2[steal] = 0.0;
            changed       = true;
        }

        // Update step: centroids become member means.
        std::fill(model.centroids.begin(), model.centroids.end(), 0.0);
        for (int t = 0; t < n; ++t) {
            double* c       = centroid(model.assignment[t]);
            const double* p = point(t);
            for (int j = 0; j < dim; ++j) c[j] += p[j];
        }
        for (int c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                double* cp = centroid(c);
                for (int j = 0; j < dim; ++j) cp[j] /= sizes[c];
            }
        }

        if (inertia_log) {
            double inertia = 0.0;
            for (int t = 0; t < n; ++t) {
                inertia += detail::dist2(point(t), centroid(model.assignment[t]), dim);
            }
            inertia_log->push_back(inertia);
        }
        if (!changed) break;
    }
    return model;
}

// Clusters are adjacent when they contain a 4-neighbor token pair.
inline std::vector<std::uint8_t> cluster_adjacency(const std::vector<int>& assignment,
                                                   int h, int w, int k) {
    if (assignment.size() != static_cast<std::size_t>(h) * w) {
        throw std::invalid_argument("cluster_adjacency: assignment size mismatch");
    }
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(k) * k, 0);
    auto mark = [&](int a, int b) {
        if (a == b) return;
        adj[static_cast<std::size_t>(a) * k + b] = 1;
        adj[static_cast<std::size_t>(b) * k + a] = 1;
    };
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const int t = i * w + j;
            if (j + 1 < w) mark(assignment[t], assignment[t + 1]);
            if (i + 1 < h) mark(assignment[t], assignment[t + w]);
        }
    }
    return adj;
}

// Non-trainable pooled cluster score: the mean member feature norm, mixed with
// the mean of the adjacent clusters' raw scores. Isolated clusters keep their
// raw score.
inline std::vector<double> graph_pool(const ClusterModel& model,
                                      const std::vector<double>& features,
                                      double neighbor_mix) {
    const int n = static_cast<int>(model.assignment.size());
    const int d = model.dim;
    if (features.size() != static_cast<std::size_t>(n) * d) {
        throw std::invalid_argument("graph_pool: feature buffer size mismatch");
    }
    std::vector<double> raw(model.k, 0.0);
    std::vector<int> count(model.k, 0);
    for (int t = 0; t < n; ++t) {
        const double* p = features.data() + static_cast<std::size_t>(t) * d;
        double acc      = 0.0;
        for (int c = 0; c < d; ++c) acc += p[c] * p[c];
        raw[model.assignment[t]] += std::sqrt(acc);
        ++count[model.assignment[t]];
    }
    for (int c = 0; c < model.k; ++c) {
        if (count[c] > 0) raw[c] /= count[c];
    }
    std::vector<double> pooled(model.k);
    for (int c = 0; c < model.k; ++c) {
        double neighbor_sum = 0.0;
        int neighbors       = 0;
        for (int o = 0; o < model.k; ++o) {
            if (model.adjacent(c, o)) {
                neighbor_sum += raw[o];
                ++neighbors;
            }
        }
        pooled[c] = neighbors == 0
                        ? raw[c]
                        : (1.0 - neighbor_mix) * raw[c] +
                              neighbor_mix * (neighbor_sum / neighbors);
    }
    return pooled;
}

// Cluster ids ordered by score, highest first, ties toward the lower id.
inline std::vector<int> top_clusters(const std::vector<double>& scores, int m) {
    const int k = static_cast<int>(scores.size());
    if (m < 0 || m > k) {
        throw std::invalid_argument("top_clusters: m out of range");
    }
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(m);
    return order;
}

}  // namespace catprune
