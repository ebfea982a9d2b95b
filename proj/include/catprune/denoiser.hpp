#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "catprune/config.hpp"
#include "catprune/grid.hpp"
#include "catprune/parallel.hpp"
#include "catprune/rng.hpp"

namespace catprune {

// Dense row-major matrix; rows are sequence positions.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const {
        return a.data() + static_cast<std::size_t>(r) * cols;
    }

    bool operator==(const Mat&) const = default;
};

inline double gelu_tanh(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// y = rms_norm(x) * scale, eps 1e-6
inline void rms_norm_row(const double* x, const double* scale, int d, double* y) {
    double ms = 0.0;
    for (int c = 0; c < d; ++c) ms += x[c] * x[c];
    const double inv = 1.0 / std::sqrt(ms / d + 1e-6);
    for (int c = 0; c < d; ++c) y[c] = x[c] * inv * scale[c];
}

// y[j] = sum_c x[c] * w[c*out + j]
inline void matvec_rowmajor(const double* x, const double* w, int in, int out,
                            double* y) {
    for (int j = 0; j < out; ++j) y[j] = 0.0;
    for (int c = 0; c < in; ++c) {
        const double xc = x[c];
        const double* wr = w + static_cast<std::size_t>(c) * out;
        for (int j = 0; j < out; ++j) y[j] += xc * wr[j];
    }
}

struct LayerWeights {
    std::vector<double> norm_attn, norm_mlp;  // d
    std::vector<double> wq, wk, wv, wo;       // d x d
    std::vector<double> w_up, w_down;         // d x rd, rd x d
};

// Per-layer K/V row caches plus block-output buffers; block[0] holds the
// embedded input, block[l+1] the output of layer l. Rows of unselected tokens
// keep their last recomputed bytes across pruned steps.
struct DenoiserCaches {
    int seq     = 0;
    int d_model = 0;
    bool ready  = false;  // true once a full pass has populated every row
    std::vector<Mat> k, v;    // one per layer
    std::vector<Mat> block;   // layers + 1
    TokenGrid noise_prev;     // n_{t-1}, image tokens only
    TokenGrid noise_ref;      // n recorded at the last warmup step

    DenoiserCaches() = default;
    DenoiserCaches(int layers, int seq_len, int d) : seq(seq_len), d_model(d) {
        k.assign(layers, Mat(seq_len, d));
        v.assign(layers, Mat(seq_len, d));
        block.assign(layers + 1, Mat(seq_len, d));
    }
};

// Fixed-weight pre-norm transformer over text rows + image-token rows. Image
// token t occupies sequence row text_tokens + t. The same row-update routine
// serves the dense path (all rows) and the pruned path (selected rows only),
// so the two agree bitwise wherever both compute.
class ToyDiT {
  public:
    int layers = 0, d_model = 0, heads = 0, mlp_ratio = 0;
    int noise_channels = 0, text_tokens = 0;

    std::vector<double> embed_in;    // noise_channels x d_model
    Mat text_embed;                  // text_tokens x d_model
    std::vector<double> final_norm;  // d_model
    std::vector<double> embed_out;   // d_model x noise_channels
    std::vector<LayerWeights> block_weights;

    static ToyDiT build(const RunConfig& cfg, Rng weights_rng) {
        cfg.validate();
        ToyDiT m;
        m.layers         = cfg.layers;
        m.d_model        = cfg.model_width;
        m.heads          = cfg.heads;
        m.mlp_ratio      = cfg.mlp_ratio;
        m.noise_channels = cfg.noise_channels;
        m.text_tokens    = cfg.text_tokens;

        auto draw = [&weights_rng](std::vector<double>& w, std::size_t count,
                                   int fan_in, double gain) {
            w.resize(count);
            const double sigma = gain / std::sqrt(static_cast<double>(fan_in));
            for (double& v : w) v = weights_rng.normal() * sigma;
        };

        const int d  = m.d_model;
        const int rd = d * m.mlp_ratio;
        draw(m.embed_in, static_cast<std::size_t>(m.noise_channels) * d,
             m.noise_channels, 1.0);
        if (m.text_tokens > 0) {
            m.text_embed = Mat(m.text_tokens, d);
            for (double& v : m.text_embed.a) v = weights_rng.normal();
        }
        m.block_weights.resize(m.layers);
        for (LayerWeights& lw : m.block_weights) {
            lw.norm_attn.assign(d, 1.0);
            lw.norm_mlp.assign(d, 1.0);
            draw(lw.wq, static_cast<std::size_t>(d) * d, d, kProjGain);
            draw(lw.wk, static_cast<std::size_t>(d) * d, d, kProjGain);
            draw(lw.wv, static_cast<std::size_t>(d) * d, d, kProjGain);
            draw(lw.wo, static_cast<std::size_t>(d) * d, d, kProjGain);
            draw(lw.w_up, static_cast<std::size_t>(d) * rd, d, kProjGain);
            draw(lw.w_down, static_cast<std::size_t>(rd) * d, rd, kProjGain);
        }
        m.final_norm.assign(d, 1.0);
        draw(m.embed_out, static_cast<std::size_t>(d) * m.noise_channels, d, 1.0);
        return m;
    }

    int sequence_length(int image_token_count) const {
        return text_tokens + image_token_count;
    }

    DenoiserCaches make_caches(int image_token_count) const {
        return DenoiserCaches(layers, sequence_length(image_token_count), d_model);
    }

    // Sequence rows touched in a step: every text row plus the selected image
    // tokens.
    std::vector<int> active_rows(const TokenIndexSet& selected) const {
        std::vector<int> rows;
        rows.reserve(text_tokens + selected.size());
        for (int r = 0; r < text_tokens; ++r) rows.push_back(r);
        for (int id : selected.ids()) rows.push_back(text_tokens + id);
        return rows;
    }

    // Recomputes Q/K/V and the block update for `rows` only; K/V rows land in
    // the cache and attention reads the full cached K/V. Rows of `out` not in
    // `rows` are left untouched.
    void update_layer_rows(int layer, const Mat& input, Mat& out,
                           const std::vector<int>& rows, Mat& kcache,
                           Mat& vcache) const {
        const LayerWeights& lw = block_weights[layer];
        const int d  = d_model;
        const int dh = d / heads;
        const int nr = static_cast<int>(rows.size());
        const int seq = input.rows;

        Mat q(nr, d);
        parallel_for(0, nr, [&](int i) {
            std::vector<double> normed(d);
            const int r = rows[i];
            rms_norm_row(input.row(r), lw.norm_attn.data(), d, normed.data());
            matvec_rowmajor(normed.data(), lw.wq.data(), d, d, q.row(i));
            matvec_rowmajor(normed.data(), lw.wk.data(), d, d, kcache.row(r));
            matvec_rowmajor(normed.data(), lw.wv.data(), d, d, vcache.row(r));
        });

        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        parallel_for(0, nr, [&](int i) {
            const int r = rows[i];
            std::vector<double> scores(seq), attn(d), tmp(std::max(d, d * mlp_ratio));
            for (int h = 0; h < heads; ++h) {
                const int off = h * dh;
                const double* qh = q.row(i) + off;
                double peak = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < seq; ++j) {
                    const double* kh = kcache.row(j) + off;
                    double dot = 0.0;
                    for (int c = 0; c < dh; ++c) dot += qh[c] * kh[c];
                    scores[j] = dot * inv_sqrt_dh;
                    peak      = std::max(peak, scores[j]);
                }
                double denom = 0.0;
                for (int j = 0; j < seq; ++j) {
                    scores[j] = std::exp(scores[j] - peak);
                    denom += scores[j];
                }
                for (int c = 0; c < dh; ++c) tmp[off + c] = 0.0;
                for (int j = 0; j < seq; ++j) {
                    const double p   = scores[j] / denom;
                    const double* vh = vcache.row(j) + off;
                    for (int c = 0; c < dh; ++c) tmp[off + c] += p * vh[c];
                }
            }
            matvec_rowmajor(tmp.data(), lw.wo.data(), d, d, attn.data());

            double* o = out.row(r);
            const double* in = input.row(r);
            for (int c = 0; c < d; ++c) o[c] = in[c] + attn[c];

            // MLP sub-block on the attention result, residual again
            std::vector<double> normed(d), hidden(d * mlp_ratio);
            rms_norm_row(o, lw.norm_mlp.data(), d, normed.data());
            matvec_rowmajor(normed.data(), lw.w_up.data(), d, d * mlp_ratio,
                            hidden.data());
            for (double& hv : hidden) hv = gelu_tanh(hv);
            matvec_rowmajor(hidden.data(), lw.w_down.data(), d * mlp_ratio, d,
                            tmp.data());
            for (int c = 0; c < d; ++c) o[c] += tmp[c];
        });
    }

    // Single-layer pruned forward: out rows for the selected image tokens and
    // all text rows are recomputed from h_prev, the rest are h_prev copies.
    Mat pruned_attention_forward(int layer, const Mat& h_prev,
                                 const TokenIndexSet& selected,
                                 DenoiserCaches& caches) const {
        if (!caches.ready) {
            throw state_error("pruned_attention_forward: caches not populated");
        }
        if (h_prev.rows != caches.seq || h_prev.cols != d_model) {
            throw std::invalid_argument("pruned_attention_forward: shape mismatch");
        }
        Mat out = h_prev;
        const std::vector<int> rows = active_rows(selected);
        update_layer_rows(layer, h_prev, out, rows, caches.k[layer],
                          caches.v[layer]);
        return out;
    }

    // One denoiser evaluation. Full mode embeds and recomputes every row and
    // marks the caches ready; pruned mode touches only text rows plus the
    // selected tokens and serves n_{t-1} rows for the rest.
    TokenGrid predict_noise(const TokenGrid& x, const TokenIndexSet& selected,
                            bool full, DenoiserCaches& caches) const {
        if (x.channels != noise_channels) {
            throw std::invalid_argument("predict_noise: channel mismatch");
        }
        const int n = x.tokens();
        if (caches.seq != sequence_length(n)) {
            throw std::invalid_argument("predict_noise: cache shape mismatch");
        }
        if (!full && !caches.ready) {
            throw state_error("predict_noise: pruned call before any full pass");
        }

        const TokenIndexSet img =
            full ? TokenIndexSet::all(n) : selected;
        const std::vector<int> rows = active_rows(img);

        Mat& h0 = caches.block[0];
        for (int r = 0; r < text_tokens; ++r) {
            std::copy(text_embed.row(r), text_embed.row(r) + d_model, h0.row(r));
        }
        for (int id : img.ids()) {
            matvec_rowmajor(x.token_ptr(id), embed_in.data(), noise_channels,
                            d_model, h0.row(text_tokens + id));
        }

        for (int l = 0; l < layers; ++l) {
            update_layer_rows(l, caches.block[l], caches.block[l + 1], rows,
                              caches.k[l], caches.v[l]);
        }

        TokenGrid noise(x.height, x.width, noise_channels);
        if (!full) noise = caches.noise_prev;
        const Mat& top = caches.block[layers];
        std::vector<double> normed(d_model);
        for (int id : img.ids()) {
            rms_norm_row(top.row(text_tokens + id), final_norm.data(), d_model,
                         normed.data());
            matvec_rowmajor(normed.data(), embed_out.data(), d_model,
                            noise_channels, noise.token_ptr(id));
        }
        if (full) caches.ready = true;
        caches.noise_prev = noise;
        return noise;
    }

  private:
    static constexpr double kProjGain = 0.5;
};

}  // namespace catprune
