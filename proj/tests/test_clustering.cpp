#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "test_support.hpp"

using catprune::build_features;
using catprune::cluster_adjacency;
using catprune::ClusterModel;
using catprune::graph_pool;
using catprune::kmeans;
using catprune::PositionalEncoding;
using catprune::Rng;
using catprune::TokenGrid;
using catprune::top_clusters;

TEST(PositionalEncoding, MatchesClosedForm) {
    for (auto [h, w] : {std::pair{1, 1}, {2, 3}, {5, 4}, {8, 8}}) {
        const int d = 6;
        const PositionalEncoding pe(h, w, d);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const int t = i * w + j;
                for (int c = 0; c < d; ++c) {
                    const double want = c < d / 2 ? static_cast<double>(i) / h
                                                  : static_cast<double>(j) / w;
                    ASSERT_EQ(pe.at(t, c), want) << h << "x" << w << " t=" << t;
                    ASSERT_GE(pe.at(t, c), 0.0);
                    ASSERT_LT(pe.at(t, c), 1.0);
                }
            }
        }
    }
}

TEST(PositionalEncoding, RejectsOddOrTinyDim) {
    EXPECT_THROW(PositionalEncoding(2, 2, 5), std::invalid_argument);
    EXPECT_THROW(PositionalEncoding(2, 2, 0), std::invalid_argument);
    EXPECT_THROW(PositionalEncoding(0, 2, 4), std::invalid_argument);
}

TEST(BuildFeatures, ZeroNoiseGivesWeightedEncoding) {
    const TokenGrid rn(3, 4, 6);
    const PositionalEncoding pe(3, 4, 6);
    const auto f = build_features(rn, pe, 2.5);
    for (int t = 0; t < rn.tokens(); ++t) {
        for (int c = 0; c < 6; ++c) {
            ASSERT_EQ(f[t * 6 + c], 2.5 * pe.at(t, c));
        }
    }
}

TEST(BuildFeatures, ZeroWeightGivesStandardizedNoise) {
    Rng rng(101);
    TokenGrid rn = testsup::random_grid(4, 4, 4, rng, 3.0);
    const PositionalEncoding pe(4, 4, 4);
    const auto f = build_features(rn, pe, 0.0);
    // per-channel std of the standardized field is 1
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int t = 0; t < 16; ++t) mean += f[t * 4 + c];
        mean /= 16;
        double var = 0.0;
        for (int t = 0; t < 16; ++t) {
            var += (f[t * 4 + c] - mean) * (f[t * 4 + c] - mean);
        }
        EXPECT_NEAR(var / 16, 1.0, 1e-9);
    }
}

TEST(BuildFeatures, MatchesScalarOracle) {
    Rng rng(102);
    const int h = 3, w = 5, d = 4;
    TokenGrid rn = testsup::random_grid(h, w, d, rng, 2.0);
    const PositionalEncoding pe(h, w, d);
    const auto f = build_features(rn, pe, 1.0);

    // independent recomputation, channel by channel
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int t = 0; t < h * w; ++t) mean += rn.at(t, c);
        mean /= h * w;
        double var = 0.0;
        for (int t = 0; t < h * w; ++t) {
            var += (rn.at(t, c) - mean) * (rn.at(t, c) - mean);
        }
        var /= h * w;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const int t       = i * w + j;
                const double posv = c < d / 2 ? static_cast<double>(i) / h
                                              : static_cast<double>(j) / w;
                const double want = rn.at(t, c) / std::sqrt(var) + posv;
                ASSERT_NEAR(f[t * d + c], want, 1e-12);
            }
        }
    }
}

TEST(BuildFeatures, ConstantChannelPassesThrough) {
    TokenGrid rn(2, 2, 4);
    for (int t = 0; t < 4; ++t) rn.at(t, 0) = 42.0;  // zero variance channel
    const PositionalEncoding pe(2, 2, 4);
    const auto f = build_features(rn, pe, 0.0);
    for (int t = 0; t < 4; ++t) ASSERT_EQ(f[t * 4 + 0], 42.0);
}

TEST(BuildFeatures, RejectsShapeMismatch) {
    const TokenGrid rn(2, 2, 4);
    const PositionalEncoding pe(2, 2, 6);
    EXPECT_THROW(build_features(rn, pe, 1.0), std::invalid_argument);
}

TEST(Kmeans, SingleClusterCentroidIsMean) {
    Rng rng(103);
    const int n = 12, d = 3;
    std::vector<double> pts(n * d);
    for (double& v : pts) v = rng.normal();
    const ClusterModel m = kmeans(pts, n, d, 1, Rng(9).substream("kmeans-init"));
    EXPECT_EQ(m.k, 1);
    for (int t = 0; t < n; ++t) EXPECT_EQ(m.assignment[t], 0);
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int t = 0; t < n; ++t) mean += pts[t * d + c];
        EXPECT_NEAR(m.centroids[c], mean / n, 1e-12);
    }
}

TEST(Kmeans, SeparatedBlobsMatchExhaustiveOracle) {
    Rng rng(104);
    const int d = 2;
    std::vector<double> pts;
    std::vector<int> truth;
    for (int t = 0; t < 6; ++t) {
        pts.push_back(0.0 + 0.3 * rng.normal());
        pts.push_back(0.0 + 0.3 * rng.normal());
        truth.push_back(0);
    }
    for (int t = 0; t < 6; ++t) {
        pts.push_back(10.0 + 0.3 * rng.normal());
        pts.push_back(10.0 + 0.3 * rng.normal());
        truth.push_back(1);
    }
    const int n          = 12;
    const ClusterModel m = kmeans(pts, n, d, 2, Rng(4).substream("kmeans-init"));

    // partition equal to blob membership, up to label swap
    for (int t = 1; t < n; ++t) {
        EXPECT_EQ(m.assignment[t] == m.assignment[0], truth[t] == truth[0]);
    }

    std::vector<int> best_assign;
    const double best = testsup::best_two_cluster_inertia(pts, n, d, &best_assign);
    double inertia    = 0.0;
    for (int t = 0; t < n; ++t) {
        for (int c = 0; c < d; ++c) {
            const double diff = pts[t * d + c] - m.centroids[m.assignment[t] * d + c];
            inertia += diff * diff;
        }
    }
    EXPECT_NEAR(inertia, best, 1e-9);
}

TEST(Kmeans, EachPointItsOwnCluster) {
    Rng rng(105);
    const int n = 9, d = 2;
    std::vector<double> pts(n * d);
    for (double& v : pts) v = rng.normal();
    const ClusterModel m = kmeans(pts, n, d, n, Rng(11).substream("kmeans-init"));
    std::vector<int> seen(n, 0);
    for (int t = 0; t < n; ++t) ++seen[m.assignment[t]];
    for (int c = 0; c < n; ++c) EXPECT_EQ(seen[c], 1);
    double inertia = 0.0;
    for (int t = 0; t < n; ++t) {
        for (int c = 0; c < d; ++c) {
            const double diff = pts[t * d + c] - m.centroids[m.assignment[t] * d + c];
            inertia += diff * diff;
        }
    }
    EXPECT_EQ(inertia, 0.0);
}

TEST(Kmeans, RejectsBadK) {
    std::vector<double> pts = {0, 0, 1, 1};
    EXPECT_THROW(kmeans(pts, 2, 2, 3, Rng(0)), std::invalid_argument);
    EXPECT_THROW(kmeans(pts, 2, 2, 0, Rng(0)), std::invalid_argument);
}

TEST(Kmeans, InertiaNonIncreasing) {
    Rng rng(106);
    for (int it = 0; it < 20; ++it) {
        const int n = 40, d = 3, k = 5;
        std::vector<double> pts(n * d);
        for (double& v : pts) v = rng.normal() * 2.0;
        std::vector<double> log;
        kmeans(pts, n, d, k, Rng(it).substream("kmeans-init"), 50, &log);
        ASSERT_GE(log.size(), 1u);
        for (std::size_t i = 1; i < log.size(); ++i) {
            ASSERT_LE(log[i], log[i - 1] + 1e-9) << "iteration " << i;
        }
    }
}

TEST(Kmeans, DeterministicGivenSeed) {
    Rng rng(107);
    const int n = 30, d = 4, k = 4;
    std::vector<double> pts(n * d);
    for (double& v : pts) v = rng.normal();
    const ClusterModel a = kmeans(pts, n, d, k, Rng(3).substream("kmeans-init"));
    const ClusterModel b = kmeans(pts, n, d, k, Rng(3).substream("kmeans-init"));
    EXPECT_EQ(a, b);
}

TEST(Kmeans, RepairKeepsEveryClusterPopulated) {
    // ten identical points plus two outliers force empty-cluster repair
    std::vector<double> pts;
    for (int t = 0; t < 10; ++t) {
        pts.push_back(0.0);
        pts.push_back(0.0);
    }
    pts.push_back(5.0);
    pts.push_back(5.0);
    pts.push_back(-5.0);
    pts.push_back(5.0);
    const int n = 12;
    for (int seed = 0; seed < 10; ++seed) {
        const ClusterModel m =
            kmeans(pts, n, 2, 3, Rng(seed).substream("kmeans-init"));
        std::vector<int> sizes(3, 0);
        for (int t = 0; t < n; ++t) {
            ASSERT_GE(m.assignment[t], 0);
            ASSERT_LT(m.assignment[t], 3);
            ++sizes[m.assignment[t]];
        }
        for (int c = 0; c < 3; ++c) EXPECT_GE(sizes[c], 1) << "seed " << seed;
    }
}

TEST(ClusterAdjacency, SingleClusterHasNone) {
    const std::vector<int> assign(6, 0);
    const auto adj = cluster_adjacency(assign, 2, 3, 1);
    EXPECT_EQ(adj[0], 0);
}

TEST(ClusterAdjacency, TwoCellGridTouches) {
    const auto adj = cluster_adjacency({0, 1}, 2, 1, 2);
    EXPECT_EQ(adj[0 * 2 + 1], 1);
    EXPECT_EQ(adj[1 * 2 + 0], 1);
    EXPECT_EQ(adj[0 * 2 + 0], 0);
    EXPECT_EQ(adj[1 * 2 + 1], 0);
}

TEST(ClusterAdjacency, StripesMatchBruteForce) {
    std::vector<int> assign(16);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) assign[i * 4 + j] = i % 4;
    }
    EXPECT_EQ(cluster_adjacency(assign, 4, 4, 4),
              testsup::adjacency_oracle(assign, 4, 4, 4));
}

TEST(ClusterAdjacency, RandomAssignmentsMatchBruteForce) {
    Rng rng(108);
    for (int it = 0; it < 30; ++it) {
        const int h = 1 + static_cast<int>(rng.below(6));
        const int w = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(4));
        std::vector<int> assign(h * w);
        for (int& a : assign) a = static_cast<int>(rng.below(k));
        const auto got = cluster_adjacency(assign, h, w, k);
        ASSERT_EQ(got, testsup::adjacency_oracle(assign, h, w, k));
        for (int a = 0; a < k; ++a) {
            ASSERT_EQ(got[a * k + a], 0);  // irreflexive
            for (int b = 0; b < k; ++b) {
                ASSERT_EQ(got[a * k + b], got[b * k + a]);  // symmetric
            }
        }
    }
}

namespace {

ClusterModel tiny_model(std::vector<int> assignment, int h, int w, int k, int dim) {
    ClusterModel m;
    m.k          = k;
    m.dim        = dim;
    m.assignment = std::move(assignment);
    m.adjacency  = cluster_adjacency(m.assignment, h, w, k);
    m.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);
    return m;
}

}  // namespace

TEST(GraphPool, MixOffGivesMeanMemberNorms) {
    const ClusterModel m = tiny_model({0, 0, 1, 1}, 2, 2, 2, 1);
    const std::vector<double> features = {1.0, 3.0, -4.0, 0.0};
    const auto scores = graph_pool(m, features, 0.0);
    EXPECT_NEAR(scores[0], 2.0, 1e-12);  // (1+3)/2
    EXPECT_NEAR(scores[1], 2.0, 1e-12);  // (4+0)/2
}

TEST(GraphPool, NeighborAveragingHandCase) {
    const ClusterModel m = tiny_model({0, 1}, 1, 2, 2, 1);
    const std::vector<double> features = {1.0, 3.0};
    const auto scores = graph_pool(m, features, 0.5);
    EXPECT_NEAR(scores[0], 2.0, 1e-12);
    EXPECT_NEAR(scores[1], 2.0, 1e-12);
}

TEST(GraphPool, UniformFeaturesUniformScores) {
    const ClusterModel m = tiny_model({0, 1, 2, 0, 1, 2}, 2, 3, 3, 2);
    const std::vector<double> features(6 * 2, 0.7);
    const auto scores = graph_pool(m, features, 0.5);
    for (int c = 1; c < 3; ++c) EXPECT_NEAR(scores[c], scores[0], 1e-12);
}

TEST(GraphPool, ChainAdjacencyMixesNeighbors) {
    // three stacked row-clusters: 1 touches both ends, 0 and 2 only touch 1
    const ClusterModel m = tiny_model({0, 0, 1, 1, 2, 2}, 3, 2, 3, 1);
    const std::vector<double> features = {1, 1, 5, 5, 9, 9};
    const auto s = graph_pool(m, features, 1.0);
    EXPECT_NEAR(s[0], 5.0, 1e-12);
    EXPECT_NEAR(s[1], 5.0, 1e-12);  // mean of raw 1 and 9
    EXPECT_NEAR(s[2], 5.0, 1e-12);
}

TEST(GraphPool, IsolatedClusterKeepsRawScore) {
    ClusterModel m = tiny_model({0, 0, 1, 1}, 2, 2, 2, 1);
    m.adjacency.assign(4, 0);  // sever the link
    const std::vector<double> features = {1.0, 3.0, 7.0, 9.0};
    const auto s = graph_pool(m, features, 0.9);
    EXPECT_NEAR(s[0], 2.0, 1e-12);
    EXPECT_NEAR(s[1], 8.0, 1e-12);
}

TEST(GraphPool, DependsOnlyOnMemberMultiset) {
    ClusterModel m = tiny_model({0, 0, 1, 1}, 2, 2, 2, 2);
    std::vector<double> f1 = {1, 2, 3, 4, 5, 6, 7, 8};
    // swap the two members of cluster 0
    std::vector<double> f2 = {3, 4, 1, 2, 5, 6, 7, 8};
    EXPECT_EQ(graph_pool(m, f1, 0.0), graph_pool(m, f2, 0.0));
}

TEST(TopClusters, OrderedByScoreThenId) {
    EXPECT_EQ(top_clusters({0.1, 0.9, 0.5}, 2), (std::vector<int>{1, 2}));
    EXPECT_EQ(top_clusters({0.5, 0.5, 0.5}, 1), (std::vector<int>{0}));
    EXPECT_EQ(top_clusters({0.1, 0.9, 0.5}, 3), (std::vector<int>{1, 2, 0}));
    EXPECT_THROW(top_clusters({0.1}, 2), std::invalid_argument);
}
