// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "napmat/nap.hpp"
#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

namespace napmat::hynap {

// Per-layer reduction budget of the hybrid pipeline.
struct HybridStep {
    int prune_count = 0;
    int merge_count = 0;
};

struct BsmPlan {
    struct Edge {
        int source = 0;  // token merged away
        int dest = 0;    // token it was folded into
        double similarity = 0.0;
    };
    std::vector<Edge> merged;  // selected edges, source index ascending
};

struct BsmResult {
    TokenBatch tokens;
    std::vector<BsmPlan> plans;
};

// Bipartite soft matching: candidates are split into two alternating
// sets A (even rank) and B (odd rank), each A token links to its most
// similar B token by cosine over head-averaged keys, and the r highest
// scoring links merge their A token into its B token by size-weighted
// averaging. `ranking`, when non-empty, gives the candidate tokens of
// each sample in rank order (DiffRate-style importance grouping);
// otherwise candidates alternate by sequence position. Requires
// 2 * r < candidate count.
BsmResult bsm_merge(const TokenBatch& batch, const KeyTensor& keys, int r,
                    const std::vector<std::vector<int>>& ranking = {});

struct NapOptions {
    int radius = 3;
    double alpha = 0.1;
    nap::FusedWeighting weighting = nap::FusedWeighting::Xi;
};

struct HynapPlan {
    nap::PrunePlan prune;
    std::vector<BsmPlan> bsm;
};

struct HynapResult {
    TokenBatch tokens;
    HynapPlan plan;
};

// One hybrid layer: neighbor-aware importance is computed from the
// attention map, the prune_count lowest scoring tokens are fused into a
// single aggregate, and the kept tokens are compressed further with
// importance-grouped bsm_merge removing merge_count more. absorb_token
// names a pre-existing aggregate to exclude from ranking and re-absorb.
// Output count: tokens - prune_count - merge_count, plus one aggregate
// when prune_count > 0 (net of any absorbed aggregate).
HynapResult hynap_layer(const TokenBatch& batch, const AttentionMap& attn,
                        const KeyTensor& keys, HybridStep step, const NapOptions& options,
                        int absorb_token = -1);

}  // namespace napmat::hynap
