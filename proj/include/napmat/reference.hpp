// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "napmat/grid.hpp"
#include "napmat/hynap.hpp"
#include "napmat/mat.hpp"
#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

// Serial, loop-level reference implementations. They restate the
// contracts in the most literal form possible, independent of the tuned
// kernels, and back both the test suite (as oracles) and the benchmark
// (as scaling baselines).
namespace napmat::ref {

// Literal triple loop over heads, queries and tokens.
std::vector<double> received_attention(const AttentionMap& attn);

// Shift-and-sum convolution with inline kernel weights.
std::vector<double> neighbor_awareness(const std::vector<double>& r_attn, int batch, int count,
                                       int radius);

// Per-pair scoring without any precomputation; cosine is evaluated as
// dot / (|a| * |b|), numerically equivalent to the kernel's
// normalize-then-dot within rounding.
std::vector<double> adjacent_similarity(const TokenBatch& batch, const KeyTensor* keys,
                                        const mat::SimilarityConfig& cfg);

// Full merge pipeline re-derived step by step: naive pair scores,
// repeated-argmax selection, backward-scan interval detection, and
// per-destination averaging. Must agree with mat::mat_reduce exactly.
TokenBatch mat_reduce(const TokenBatch& batch, const KeyTensor* keys,
                      const mat::SimilarityConfig& cfg, int r);

// Bipartite matching by exhaustive scan over all A x B pairs.
TokenBatch bsm_merge(const TokenBatch& batch, const KeyTensor& keys, int r,
                     const std::vector<std::vector<int>>& ranking = {});

// Direct pairwise walk over the permutation.
double locality_score(const CurveOrder& order, int radius,
                      CellDistance metric = CellDistance::Chessboard);

// Single-threaded softmax attention with no reduction-order canonicalization.
AttentionResult attention_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer,
                                  int silent_token = -1);

// All-pairs cosine over raw features; the quadratic counterpart of
// adjacent similarity used by the scaling benchmark. Returns the score
// sum so the work cannot be optimized away.
double all_pairs_similarity_sum(const TokenBatch& batch, int sample);

}  // namespace napmat::ref
