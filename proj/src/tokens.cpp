// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/tokens.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "napmat/errors.hpp"

namespace napmat {

TokenBatch TokenBatch::zeros(int batch, int tokens, int channels, int protected_count,
                             GridShape grid) {
    if (batch < 1 || tokens < 1 || channels < 1) {
        throw ShapeError("token batch dims must be positive");
    }
    if (protected_count < 0 || protected_count > tokens) {
        throw ShapeError("protected token count out of range");
    }
    TokenBatch out;
    out.batch = batch;
    out.tokens = tokens;
    out.channels = channels;
    out.protected_count = protected_count;
    out.grid = grid;
    out.features.assign(static_cast<std::size_t>(batch) * tokens * channels, 0.0);
    out.sizes.assign(static_cast<std::size_t>(batch) * tokens, 1.0);
    out.provenance.assign(static_cast<std::size_t>(batch) * tokens, {});
    return out;
}

void TokenBatch::validate() const {
    const std::size_t n = static_cast<std::size_t>(batch) * tokens;
    if (features.size() != n * channels) throw ShapeError("feature buffer size mismatch");
    if (sizes.size() != n) throw ShapeError("size buffer size mismatch");
    if (provenance.size() != n) throw ShapeError("provenance buffer size mismatch");
    if (protected_count < 0 || protected_count > tokens) {
        throw ShapeError("protected token count out of range");
    }
}

TokenBatch reorder_tokens(const TokenBatch& batch, const CurveOrder& order) {
    batch.validate();
    if (batch.grid != order.shape) {
        throw ShapeError("curve order grid does not match the token batch grid");
    }
    if (batch.image_tokens() != order.shape.cells()) {
        throw ShapeError("token count does not match the grid: expected " +
                         std::to_string(order.shape.cells()) + " non-protected tokens, have " +
                         std::to_string(batch.image_tokens()));
    }

    TokenBatch out = batch;
    const int p = batch.protected_count;
    std::vector<signed char> seen(static_cast<std::size_t>(order.shape.cells()));

    for (int b = 0; b < batch.batch; ++b) {
        std::fill(seen.begin(), seen.end(), 0);
        for (int t = p; t < batch.tokens; ++t) {
            const auto& cells = batch.prov(b, t);
            if (cells.size() != 1) {
                throw ShapeError("reorder requires singleton provenance (unreduced batch)");
            }
            const std::uint32_t cell = cells[0];
            if (cell >= static_cast<std::uint32_t>(order.shape.cells()) || seen[cell]) {
                throw ShapeError("provenance cells do not tile the grid");
            }
            seen[cell] = 1;
            const int dst = p + order.inverse[cell];
            std::memcpy(out.token(b, dst), batch.token(b, t),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            out.size(b, dst) = batch.size(b, t);
            out.prov(b, dst) = cells;
        }
    }
    return out;
}

}  // namespace napmat
