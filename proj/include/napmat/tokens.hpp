// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "napmat/grid.hpp"

namespace napmat {

// Batched token sequence flowing through the transformer blocks.
//
// features is row-major [batch][token][channel]. The first
// protected_count positions of every sample hold class/distill tokens
// that reduction passes never touch. sizes[b][t] counts how many
// original patches token t represents (1 before any merge); provenance
// lists those patches as row-major cell ids of `grid`. Protected tokens
// carry an empty provenance set.
struct TokenBatch {
    int batch = 0;
    int tokens = 0;
    int channels = 0;
    int protected_count = 0;
    GridShape grid;

    std::vector<double> features;                    // batch * tokens * channels
    std::vector<double> sizes;                       // batch * tokens
    std::vector<std::vector<std::uint32_t>> provenance;  // batch * tokens, sorted

    static TokenBatch zeros(int batch, int tokens, int channels, int protected_count,
                            GridShape grid);

    double* token(int b, int t) {
        return features.data() + (static_cast<std::size_t>(b) * tokens + t) * channels;
    }
    const double* token(int b, int t) const {
        return features.data() + (static_cast<std::size_t>(b) * tokens + t) * channels;
    }
    std::span<const double> token_span(int b, int t) const {
        return {token(b, t), static_cast<std::size_t>(channels)};
    }

    double& size(int b, int t) { return sizes[static_cast<std::size_t>(b) * tokens + t]; }
    double size(int b, int t) const { return sizes[static_cast<std::size_t>(b) * tokens + t]; }

    std::vector<std::uint32_t>& prov(int b, int t) {
        return provenance[static_cast<std::size_t>(b) * tokens + t];
    }
    const std::vector<std::uint32_t>& prov(int b, int t) const {
        return provenance[static_cast<std::size_t>(b) * tokens + t];
    }

    int image_tokens() const { return tokens - protected_count; }

    // Throws ShapeError if the bookkeeping arrays disagree with the dims.
    void validate() const;
};

// Sorts the non-protected tokens into the sequence order given by
// `order`, using each token's (singleton) provenance cell as its grid
// position. Protected tokens stay in place. Requires a full, unreduced
// grid: every non-protected token must cover exactly one cell and the
// cells must tile the grid. Applying the row-major order restores the
// raster layout, so it acts as the inverse of any other order.
TokenBatch reorder_tokens(const TokenBatch& batch, const CurveOrder& order);

}  // namespace napmat
