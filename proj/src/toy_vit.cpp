// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/toy_vit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "napmat/errors.hpp"
#include "napmat/rng.hpp"

namespace napmat {
namespace {

constexpr double kWeightStd = 0.02;

std::vector<double> gaussian_matrix(int rows, int cols, std::uint64_t seed) {
    std::vector<double> m(static_cast<std::size_t>(rows) * cols);
    Rng rng(seed);
    for (auto& v : m) v = rng.gaussian(0.0, kWeightStd);
    return m;
}

// y = W x with W row-major [out][in].
void matvec(const std::vector<double>& w, const double* x, double* y, int out_dim, int in_dim) {
    for (int o = 0; o < out_dim; ++o) {
        const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
        double acc = 0.0;
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

void layer_norm(const double* x, double* y, int dim, double eps) {
    double mean = 0.0;
    for (int i = 0; i < dim; ++i) mean += x[i];
    mean /= dim;
    double var = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < dim; ++i) y[i] = (x[i] - mean) * inv;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

}  // namespace

void BlockConfig::validate() const {
    if (dim < 1 || heads < 1 || depth < 1) throw ShapeError("block config dims must be positive");
    if (dim % heads != 0) throw ShapeError("dim must be divisible by heads");
    if (mlp_ratio <= 0.0) throw ShapeError("mlp_ratio must be positive");
}

BlockWeights block_weights(const BlockConfig& cfg, int layer) {
    cfg.validate();
    const std::uint64_t base = derive_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(layer));
    BlockWeights w;
    w.dim = cfg.dim;
    w.hidden = cfg.hidden_dim();
    w.wq = gaussian_matrix(cfg.dim, cfg.dim, derive_seed(base, 1));
    w.wk = gaussian_matrix(cfg.dim, cfg.dim, derive_seed(base, 2));
    w.wv = gaussian_matrix(cfg.dim, cfg.dim, derive_seed(base, 3));
    w.wo = gaussian_matrix(cfg.dim, cfg.dim, derive_seed(base, 4));
    w.w1 = gaussian_matrix(w.hidden, cfg.dim, derive_seed(base, 5));
    w.w2 = gaussian_matrix(cfg.dim, w.hidden, derive_seed(base, 6));
    return w;
}

AttentionResult attention_apply(const TokenBatch& batch, const BlockWeights& weights,
                                const BlockConfig& cfg, int silent_token) {
    batch.validate();
    cfg.validate();
    if (batch.channels != cfg.dim || weights.dim != cfg.dim) {
        throw ShapeError("attention: channel count does not match config dim");
    }

    const int B = batch.batch, T = batch.tokens, C = cfg.dim;
    const int H = cfg.heads, D = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    // Projections of the pre-norm input.
    std::vector<double> q(static_cast<std::size_t>(B) * T * C);
    std::vector<double> k(q.size()), v(q.size());
#pragma omp parallel for schedule(static)
    for (long bt = 0; bt < static_cast<long>(B) * T; ++bt) {
        const int b = static_cast<int>(bt / T);
        const int t = static_cast<int>(bt % T);
        std::vector<double> normed(static_cast<std::size_t>(C));
        layer_norm(batch.token(b, t), normed.data(), C, cfg.layer_norm_eps);
        const std::size_t off = static_cast<std::size_t>(bt) * C;
        matvec(weights.wq, normed.data(), q.data() + off, C, C);
        matvec(weights.wk, normed.data(), k.data() + off, C, C);
        matvec(weights.wv, normed.data(), v.data() + off, C, C);
    }

    AttentionResult result;
    result.attn.batch = B;
    result.attn.heads = H;
    result.attn.tokens = T;
    result.attn.weights.assign(static_cast<std::size_t>(B) * H * T * T, 0.0);
    result.keys.batch = B;
    result.keys.heads = H;
    result.keys.tokens = T;
    result.keys.head_dim = D;
    result.keys.values.resize(static_cast<std::size_t>(B) * H * T * D);
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const double* src = k.data() + (static_cast<std::size_t>(b) * T + t) * C + h * D;
                std::copy(src, src + D, result.keys.key(b, h, t));
            }
        }
    }

    // Attended per-head outputs, [b][t][c] like the projections.
    std::vector<double> heads_out(static_cast<std::size_t>(B) * T * C);

#pragma omp parallel
    {
        std::vector<double> logits(static_cast<std::size_t>(T));
        std::vector<double> expw(static_cast<std::size_t>(T));
        std::vector<int> order(static_cast<std::size_t>(T));

#pragma omp for schedule(static)
        for (long bhq = 0; bhq < static_cast<long>(B) * H * T; ++bhq) {
            const int qi = static_cast<int>(bhq % T);
            const int h = static_cast<int>((bhq / T) % H);
            const int b = static_cast<int>(bhq / (static_cast<long>(H) * T));

            const double* qrow = q.data() + (static_cast<std::size_t>(b) * T + qi) * C + h * D;
            double max_logit = -std::numeric_limits<double>::infinity();
            for (int t = 0; t < T; ++t) {
                if (t == silent_token) {
                    logits[t] = -std::numeric_limits<double>::infinity();
                    continue;
                }
                const double* krow = result.keys.key(b, h, t);
                double dot = 0.0;
                for (int d = 0; d < D; ++d) dot += qrow[d] * krow[d];
                double l = dot * scale;
                if (cfg.size_weighted_attention) l += std::log(batch.size(b, t));
                logits[t] = l;
                max_logit = std::max(max_logit, l);
            }

            // Keys are summed in an order derived from the summand values
            // themselves (logit, then value vector), not from sequence
            // position. Tokens that tie on both contribute identical
            // addends, so the reduction is invariant under any permutation
            // of the input sequence, bit for bit.
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
                if (logits[lhs] != logits[rhs]) return logits[lhs] < logits[rhs];
                const double* lv = v.data() + (static_cast<std::size_t>(b) * T + lhs) * C + h * D;
                const double* rv = v.data() + (static_cast<std::size_t>(b) * T + rhs) * C + h * D;
                return std::lexicographical_compare(lv, lv + D, rv, rv + D);
            });

            double denom = 0.0;
            for (int t = 0; t < T; ++t) {
                const int key = order[t];
                expw[key] = (key == silent_token) ? 0.0 : std::exp(logits[key] - max_logit);
                denom += expw[key];
            }

            double* attn_row = &result.attn.at(b, h, qi, 0);
            for (int t = 0; t < T; ++t) attn_row[t] = expw[t] / denom;

            double* out = heads_out.data() + (static_cast<std::size_t>(b) * T + qi) * C + h * D;
            std::fill(out, out + D, 0.0);
            for (int t = 0; t < T; ++t) {
                const int key = order[t];
                const double w = attn_row[key];
                const double* vrow = v.data() + (static_cast<std::size_t>(b) * T + key) * C + h * D;
                for (int d = 0; d < D; ++d) out[d] += w * vrow[d];
            }
        }
    }

    // Output projection and residual.
    result.tokens = batch;
#pragma omp parallel for schedule(static)
    for (long bt = 0; bt < static_cast<long>(B) * T; ++bt) {
        const int b = static_cast<int>(bt / T);
        const int t = static_cast<int>(bt % T);
        std::vector<double> projected(static_cast<std::size_t>(C));
        matvec(weights.wo, heads_out.data() + static_cast<std::size_t>(bt) * C, projected.data(),
               C, C);
        double* dst = result.tokens.token(b, t);
        for (int c = 0; c < C; ++c) dst[c] += projected[c];
    }
    return result;
}

AttentionResult attention_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer,
                                  int silent_token) {
    return attention_apply(batch, block_weights(cfg, layer), cfg, silent_token);
}

TokenBatch mlp_apply(const TokenBatch& batch, const BlockWeights& weights,
                     const BlockConfig& cfg) {
    batch.validate();
    if (batch.channels != weights.dim) throw ShapeError("mlp: channel count mismatch");
    const int B = batch.batch, T = batch.tokens, C = weights.dim, Hd = weights.hidden;

    TokenBatch out = batch;
#pragma omp parallel for schedule(static)
    for (long bt = 0; bt < static_cast<long>(B) * T; ++bt) {
        const int b = static_cast<int>(bt / T);
        const int t = static_cast<int>(bt % T);
        std::vector<double> normed(static_cast<std::size_t>(C));
        std::vector<double> hidden(static_cast<std::size_t>(Hd));
        std::vector<double> back(static_cast<std::size_t>(C));
        layer_norm(batch.token(b, t), normed.data(), C, cfg.layer_norm_eps);
        matvec(weights.w1, normed.data(), hidden.data(), Hd, C);
        for (int i = 0; i < Hd; ++i) hidden[i] = gelu(hidden[i]);
        matvec(weights.w2, hidden.data(), back.data(), C, Hd);
        double* dst = out.token(b, t);
        for (int c = 0; c < C; ++c) dst[c] += back[c];
    }
    return out;
}

TokenBatch mlp_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer) {
    return mlp_apply(batch, block_weights(cfg, layer), cfg);
}

EmbedResult embed_patches(const Raster& image, int patch, int dim, std::uint64_t seed) {
    if (patch < 1 || dim < 1) throw ShapeError("patch side and dim must be positive");
    if (image.width % patch != 0 || image.height % patch != 0) {
        throw ShapeError("image dimensions " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " are not divisible by patch size " +
                         std::to_string(patch));
    }

    const GridShape grid{image.height / patch, image.width / patch};
    const int in_dim = patch * patch * image.channels;
    const std::vector<double> proj =
        gaussian_matrix(dim, in_dim, derive_seed(seed, 0xe0bed));

    TokenBatch tokens = TokenBatch::zeros(1, grid.cells() + 1, dim, 1, grid);
    std::vector<double> flat(static_cast<std::size_t>(in_dim));
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            int i = 0;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    for (int ch = 0; ch < image.channels; ++ch) {
                        flat[i++] = image.at(c * patch + px, r * patch + py, ch) / 255.0;
                    }
                }
            }
            const int t = 1 + r * grid.cols + c;
            matvec(proj, flat.data(), tokens.token(0, t), dim, in_dim);
            tokens.prov(0, t) = {static_cast<std::uint32_t>(r * grid.cols + c)};
        }
    }
    return {std::move(tokens), grid};
}

TokenBatch synthetic_tokens(int batch, GridShape grid, int channels, std::uint64_t seed,
                            int protected_count) {
    if (grid.rows < 1 || grid.cols < 1) throw ShapeError("synthetic grid must be non-empty");
    if (protected_count < 0) throw ShapeError("protected count must be >= 0");
    const int tokens = grid.cells() + protected_count;
    TokenBatch out = TokenBatch::zeros(batch, tokens, channels, protected_count, grid);
    Rng rng(derive_seed(seed, 0x70c));
    for (int b = 0; b < batch; ++b) {
        for (int t = protected_count; t < tokens; ++t) {
            double* feat = out.token(b, t);
            for (int c = 0; c < channels; ++c) feat[c] = rng.gaussian();
            out.prov(b, t) = {static_cast<std::uint32_t>(t - protected_count)};
        }
    }
    return out;
}

}  // namespace napmat
