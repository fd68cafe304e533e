// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

namespace napmat::nap {

// Normalized distance-decay kernel: weight 1/(|d|+1) at offset d,
// divided by the sum over all offsets, so the weights add up to 1 and
// peak at the center.
struct NeighborKernel {
    int radius = 0;
    std::vector<double> weights;  // 2 * radius + 1, index d + radius

    double at(int offset) const { return weights[static_cast<std::size_t>(offset + radius)]; }
};

NeighborKernel build_kernel(int radius);

// Mean attention each non-class token receives, averaged over every
// query and head: result[b][i] covers token i+1 (the class column at
// index 0 is skipped). Layout batch-major, batch x (tokens - 1).
std::vector<double> received_attention(const AttentionMap& attn);

// Attention paid by the class-token query to each non-class token,
// averaged over heads. Same layout as received_attention.
std::vector<double> cls_attention(const AttentionMap& attn);

// 1D convolution of the received-attention sequence with the kernel;
// positions outside the sequence contribute zero.
std::vector<double> neighbor_awareness(const std::vector<double>& r_attn, int batch, int count,
                                       const NeighborKernel& kernel);

// Per-token importance: xi = (1 - alpha) * cls_attn + alpha * phi.
struct ImportanceVector {
    int batch = 0;
    int count = 0;  // scored tokens per sample
    double alpha = 0.0;
    std::vector<double> r_attn;    // may be empty when built from parts
    std::vector<double> phi;
    std::vector<double> cls_attn;
    std::vector<double> xi;

    double score(int b, int i) const { return xi[static_cast<std::size_t>(b) * count + i]; }
};

ImportanceVector importance(std::vector<double> cls_attn, std::vector<double> phi, int batch,
                            int count, double alpha);

// Full scoring chain for one attention map.
ImportanceVector score_tokens(const AttentionMap& attn, const NeighborKernel& kernel,
                              double alpha);

enum class FusedWeighting {
    Xi,       // importance-weighted average of the discarded tokens
    Uniform,  // plain mean, for ablation
};

struct PrunePlan {
    double keep_ratio = 1.0;
    struct Sample {
        std::vector<int> keep;           // retained token indices, ascending
        std::vector<int> fused_sources;  // tokens folded into the aggregate
    };
    std::vector<Sample> samples;
};

struct PruneResult {
    TokenBatch tokens;
    PrunePlan plan;
};

// Keeps the ceil(keep_ratio * M) highest-importance non-protected tokens
// (ties keep the lower index) and folds all discarded tokens into one
// aggregate token appended at the end; its feature vector is the
// weighted average of the discards, its size their total, its provenance
// their union. xi must hold one score per non-protected token, which for
// scores straight out of score_tokens means protected_count == 1.
PruneResult prune(const TokenBatch& batch, const std::vector<double>& xi, double keep_ratio,
                  FusedWeighting weighting = FusedWeighting::Xi);

// Exact-count variant. absorb_token, if >= 0, names a token (typically a
// previous aggregate) that is excluded from the candidate ranking and
// always folded into the new aggregate.
PruneResult prune_to_count(const TokenBatch& batch, const std::vector<double>& xi,
                           int keep_count, FusedWeighting weighting = FusedWeighting::Xi,
                           int absorb_token = -1);

}  // namespace napmat::nap
