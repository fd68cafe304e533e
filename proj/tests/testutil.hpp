// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "napmat/rng.hpp"
#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

namespace testutil {

// Row-normalized attention built from random logits.
inline napmat::AttentionMap random_attention(int batch, int heads, int tokens,
                                             std::uint64_t seed) {
    napmat::AttentionMap attn;
    attn.batch = batch;
    attn.heads = heads;
    attn.tokens = tokens;
    attn.weights.resize(static_cast<std::size_t>(batch) * heads * tokens * tokens);
    napmat::Rng rng(seed);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            for (int q = 0; q < tokens; ++q) {
                double sum = 0.0;
                for (int k = 0; k < tokens; ++k) {
                    const double e = std::exp(rng.gaussian());
                    attn.at(b, h, q, k) = e;
                    sum += e;
                }
                for (int k = 0; k < tokens; ++k) attn.at(b, h, q, k) /= sum;
            }
        }
    }
    return attn;
}

// Gaussian token batch. With max_size > 1 the tokens carry integer sizes
// (shared across samples) and contiguous provenance runs, mimicking a
// partially merged sequence; the grid covers the total mass.
inline napmat::TokenBatch random_batch(int batch, int tokens, int channels, int protected_count,
                                       std::uint64_t seed, int max_size = 1) {
    napmat::Rng rng(seed);
    const int image_tokens = tokens - protected_count;
    std::vector<int> sizes(static_cast<std::size_t>(image_tokens));
    int total = 0;
    for (auto& s : sizes) {
        s = static_cast<int>(rng.uniform_int(1, max_size));
        total += s;
    }
    napmat::TokenBatch out = napmat::TokenBatch::zeros(batch, tokens, channels, protected_count,
                                                       {1, total});
    std::uint32_t next_cell = 0;
    for (int i = 0; i < image_tokens; ++i) {
        const int t = protected_count + i;
        std::vector<std::uint32_t> cells;
        for (int s = 0; s < sizes[static_cast<std::size_t>(i)]; ++s) cells.push_back(next_cell++);
        for (int b = 0; b < batch; ++b) {
            out.size(b, t) = sizes[static_cast<std::size_t>(i)];
            out.prov(b, t) = cells;
        }
    }
    for (int b = 0; b < batch; ++b) {
        for (int t = protected_count; t < tokens; ++t) {
            double* feat = out.token(b, t);
            for (int c = 0; c < channels; ++c) feat[c] = rng.gaussian();
        }
    }
    return out;
}

// Random per-head keys to drive the key-based similarity features.
inline napmat::KeyTensor random_keys(int batch, int heads, int tokens, int head_dim,
                                     std::uint64_t seed) {
    napmat::KeyTensor keys;
    keys.batch = batch;
    keys.heads = heads;
    keys.tokens = tokens;
    keys.head_dim = head_dim;
    keys.values.resize(static_cast<std::size_t>(batch) * heads * tokens * head_dim);
    napmat::Rng rng(seed);
    for (auto& v : keys.values) v = rng.gaussian();
    return keys;
}

// Size-weighted feature sum over non-protected tokens, one value per channel.
inline std::vector<double> weighted_feature_sum(const napmat::TokenBatch& batch, int sample) {
    std::vector<double> sum(static_cast<std::size_t>(batch.channels), 0.0);
    for (int t = batch.protected_count; t < batch.tokens; ++t) {
        const double* feat = batch.token(sample, t);
        for (int c = 0; c < batch.channels; ++c) sum[static_cast<std::size_t>(c)] += batch.size(sample, t) * feat[c];
    }
    return sum;
}

inline double total_size(const napmat::TokenBatch& batch, int sample) {
    double sum = 0.0;
    for (int t = batch.protected_count; t < batch.tokens; ++t) sum += batch.size(sample, t);
    return sum;
}

}  // namespace testutil
