// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "napmat/netpbm.hpp"
#include "napmat/tokens.hpp"

namespace napmat {

// Shape and determinism knobs for the toy transformer blocks. Weights
// are generated on the fly from (seed, layer); there is no training and
// no checkpoint loading.
struct BlockConfig {
    int dim = 64;
    int heads = 4;
    double mlp_ratio = 4.0;
    int depth = 12;
    std::uint64_t seed = 42;

    // Adds log(token size) to each key's logits so merged tokens attract
    // attention in proportion to the patches they absorbed. A no-op while
    // all sizes are 1.
    bool size_weighted_attention = true;

    double layer_norm_eps = 1e-6;

    int head_dim() const { return dim / heads; }
    int hidden_dim() const { return static_cast<int>(mlp_ratio * dim); }
    void validate() const;
};

// Softmax attention probabilities, [batch][head][query][key]; each
// (b, h, q) row sums to 1.
struct AttentionMap {
    int batch = 0;
    int heads = 0;
    int tokens = 0;
    std::vector<double> weights;

    double at(int b, int h, int q, int k) const {
        return weights[((static_cast<std::size_t>(b) * heads + h) * tokens + q) * tokens + k];
    }
    double& at(int b, int h, int q, int k) {
        return weights[((static_cast<std::size_t>(b) * heads + h) * tokens + q) * tokens + k];
    }
};

// Per-head key vectors, [batch][head][token][head_dim]; kept around for
// the key-based merge similarity features.
struct KeyTensor {
    int batch = 0;
    int heads = 0;
    int tokens = 0;
    int head_dim = 0;
    std::vector<double> values;

    const double* key(int b, int h, int t) const {
        return values.data() +
               ((static_cast<std::size_t>(b) * heads + h) * tokens + t) * head_dim;
    }
    double* key(int b, int h, int t) {
        return values.data() +
               ((static_cast<std::size_t>(b) * heads + h) * tokens + t) * head_dim;
    }
};

// One block's generated parameters; projections are row-major [out][in].
struct BlockWeights {
    int dim = 0;
    int hidden = 0;
    std::vector<double> wq, wk, wv, wo;  // dim x dim
    std::vector<double> w1;              // hidden x dim
    std::vector<double> w2;              // dim x hidden
};

BlockWeights block_weights(const BlockConfig& cfg, int layer);

struct AttentionResult {
    TokenBatch tokens;
    AttentionMap attn;
    KeyTensor keys;
};

// Pre-norm multi-head self-attention with a residual connection.
//
// Reductions over keys (softmax normalization, weighted value sums) are
// accumulated in an order derived from the summand values themselves
// rather than from token positions, which makes the result bit-identical
// under any permutation of the input tokens. `silent_token`, if >= 0,
// names a token that is masked out as a key (it still attends and flows
// through the residual path).
AttentionResult attention_apply(const TokenBatch& batch, const BlockWeights& weights,
                                const BlockConfig& cfg, int silent_token = -1);
AttentionResult attention_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer,
                                  int silent_token = -1);

// Pre-norm two-layer GELU MLP with a residual connection.
TokenBatch mlp_apply(const TokenBatch& batch, const BlockWeights& weights,
                     const BlockConfig& cfg);
TokenBatch mlp_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer);

struct EmbedResult {
    TokenBatch tokens;
    GridShape grid;
};

// Splits the raster into patch x patch tiles, projects each tile with a
// seeded Gaussian matrix and prepends a zero class token. Tokens come out
// in raster (row-major) order with singleton cell provenance.
EmbedResult embed_patches(const Raster& image, int patch, int dim, std::uint64_t seed);

// Seeded Gaussian token batch for running the pipeline without images.
// Layout matches embed_patches: `protected_count` zero tokens up front,
// then one unit-size token per grid cell in raster order.
TokenBatch synthetic_tokens(int batch, GridShape grid, int channels, std::uint64_t seed,
                            int protected_count = 1);

}  // namespace napmat
