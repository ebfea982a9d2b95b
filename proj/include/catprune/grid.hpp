#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace catprune {

// Raised when an operation is invoked before the state it depends on exists
// (e.g. a pruned forward before the caches were populated).
struct state_error : std::logic_error {
    using std::logic_error::logic_error;
};

// h x w spatial token lattice with a channel dimension. Cell (i, j) flattens
// to token index i*w + j; values are stored token-major, channels contiguous.
struct TokenGrid {
    int height   = 0;
    int width    = 0;
    int channels = 0;
    std::vector<double> data;

    TokenGrid() = default;

    TokenGrid(int h, int w, int d, double fill = 0.0)
        : height(h), width(w), channels(d) {
        if (h < 1 || w < 1 || d < 1) {
            throw std::invalid_argument("TokenGrid: dimensions must be >= 1");
        }
        data.assign(static_cast<std::size_t>(h) * w * d, fill);
    }

    int tokens() const { return height * width; }

    double& at(int token, int c) {
        return data[static_cast<std::size_t>(token) * channels + c];
    }
    double at(int token, int c) const {
        return data[static_cast<std::size_t>(token) * channels + c];
    }

    double* token_ptr(int token) {
        return data.data() + static_cast<std::size_t>(token) * channels;
    }
    const double* token_ptr(int token) const {
        return data.data() + static_cast<std::size_t>(token) * channels;
    }

    bool same_shape(const TokenGrid& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const TokenGrid&) const = default;
};

// Ordered, duplicate-free list of token indices inside a fixed universe.
class TokenIndexSet {
  public:
    TokenIndexSet() = default;

    static TokenIndexSet of_sorted(std::vector<int> ids, int universe) {
        validate(ids, universe);
        TokenIndexSet s;
        s.ids_ = std::move(ids);
        return s;
    }

    static TokenIndexSet of_unsorted(std::vector<int> ids, int universe) {
        std::sort(ids.begin(), ids.end());
        validate(ids, universe);
        TokenIndexSet s;
        s.ids_ = std::move(ids);
        return s;
    }

    static TokenIndexSet all(int universe) {
        TokenIndexSet s;
        s.ids_.resize(universe);
        std::iota(s.ids_.begin(), s.ids_.end(), 0);
        return s;
    }

    int size() const { return static_cast<int>(ids_.size()); }
    bool empty() const { return ids_.empty(); }

    bool contains(int id) const {
        return std::binary_search(ids_.begin(), ids_.end(), id);
    }

    int operator[](int i) const { return ids_[i]; }
    auto begin() const { return ids_.begin(); }
    auto end() const { return ids_.end(); }
    const std::vector<int>& ids() const { return ids_; }

    TokenIndexSet complement(int universe) const {
        TokenIndexSet out;
        out.ids_.reserve(universe - size());
        std::size_t cursor = 0;
        for (int id = 0; id < universe; ++id) {
            if (cursor < ids_.size() && ids_[cursor] == id) {
                ++cursor;
            } else {
                out.ids_.push_back(id);
            }
        }
        return out;
    }

    bool operator==(const TokenIndexSet&) const = default;

  private:
    static void validate(const std::vector<int>& ids, int universe) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= universe) {
                throw std::invalid_argument("TokenIndexSet: index out of range");
            }
            if (i > 0 && ids[i] <= ids[i - 1]) {
                throw std::invalid_argument("TokenIndexSet: duplicate index");
            }
        }
    }

    std::vector<int> ids_;
};

// Per-token L2 norm over the channel dimension.
inline std::vector<double> token_norms(const TokenGrid& g) {
    std::vector<double> out(g.tokens());
    for (int t = 0; t < g.tokens(); ++t) {
        double acc      = 0.0;
        const double* p = g.token_ptr(t);
        for (int c = 0; c < g.channels; ++c) {
            acc += p[c] * p[c];
        }
        out[t] = std::sqrt(acc);
    }
    return out;
}

// Indices of the m largest scores; ties broken toward the lower index.
inline TokenIndexSet top_k_indices(const std::vector<double>& scores, int m) {
    const int n = static_cast<int>(scores.size());
    if (m < 0 || m > n) {
        throw std::invalid_argument("top_k_indices: m out of range");
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + m, order.end(),
                      [&](int a, int b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    order.resize(m);
    return TokenIndexSet::of_unsorted(std::move(order), n);
}

}  // namespace catprune
