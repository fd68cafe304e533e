// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

namespace napmat::mat {

enum class Metric {
    Cosine,       // inner product of L2-normalized feature vectors
    SymmetricKL,  // negated symmetric KL divergence of softmaxed features
};

enum class Feature {
    KMean,    // per-token key vector averaged over heads
    X,        // raw token features
    KL2Norm,  // per-head L2-normalized keys, concatenated
};

std::string_view to_string(Metric metric);
std::string_view to_string(Feature feature);
Metric parse_metric(std::string_view name);
Feature parse_feature(std::string_view name);

struct SimilarityConfig {
    Metric metric = Metric::Cosine;
    Feature feature = Feature::KMean;
};

// Similarity of each adjacent non-protected token pair: entry j scores
// tokens (p + j, p + j + 1), j = 0 .. T - p - 2, batch-major. Both
// metrics are oriented so that larger means more similar. A pair
// containing a zero-norm vector scores -inf under cosine so it is never
// preferentially merged. keys may be null for the X feature.
std::vector<double> adjacent_similarity(const TokenBatch& batch, const KeyTensor* keys,
                                        const SimilarityConfig& cfg);

// Indices of the r largest scores, ties won by the lower index, returned
// in ascending index order.
std::vector<int> select_pairs(std::span<const double> scores, int r);

// Merge bookkeeping: dest[k] is the selected index, source[k] = dest[k] + 1,
// and filled[k] redirects chained destinations to the start of their run
// of consecutive indices so no token is both a source and a final
// destination.
struct Destinations {
    std::vector<int> dest;
    std::vector<int> source;
    std::vector<int> filled;
};

// Pure index arithmetic; `selected` must be sorted ascending and distinct.
Destinations resolve_destinations(std::span<const int> selected);

// One sample's merge decisions, all indices local to the mergeable range
// (0 = first non-protected token).
struct MergePlan {
    std::vector<double> scores;
    int r = 0;
    std::vector<int> selected;
    Destinations dests;
};

// Applies one plan per sample: every source token is folded into its
// filled destination by size-weighted feature averaging; sizes add up,
// provenance unions, survivors keep their relative order. Output has
// tokens - r tokens.
TokenBatch merge(const TokenBatch& batch, std::span<const MergePlan> plans);

struct MatResult {
    TokenBatch tokens;
    std::vector<MergePlan> plans;
};

// similarity -> top-r selection -> destination resolution -> merge.
MatResult mat_reduce(const TokenBatch& batch, const KeyTensor* keys, const SimilarityConfig& cfg,
                     int r);

}  // namespace napmat::mat
