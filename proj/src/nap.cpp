// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/nap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "napmat/errors.hpp"

namespace napmat::nap {

NeighborKernel build_kernel(int radius) {
    if (radius < 0) throw std::invalid_argument("kernel radius must be >= 0");
    NeighborKernel kernel;
    kernel.radius = radius;
    kernel.weights.resize(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int d = -radius; d <= radius; ++d) norm += 1.0 / (std::abs(d) + 1);
    for (int d = -radius; d <= radius; ++d) {
        kernel.weights[static_cast<std::size_t>(d + radius)] = (1.0 / (std::abs(d) + 1)) / norm;
    }
    return kernel;
}

namespace {

void check_attention(const AttentionMap& attn) {
    if (attn.tokens < 2) throw std::invalid_argument("attention map has no scorable tokens");
    const std::size_t expected = static_cast<std::size_t>(attn.batch) * attn.heads *
                                 attn.tokens * attn.tokens;
    if (attn.weights.size() != expected) throw ShapeError("attention buffer size mismatch");
}

}  // namespace

std::vector<double> received_attention(const AttentionMap& attn) {
    const int B = attn.batch, H = attn.heads, N = attn.tokens;
    check_attention(attn);
    const int M = N - 1;
    std::vector<double> out(static_cast<std::size_t>(B) * M);
#pragma omp parallel for schedule(static)
    for (long bi = 0; bi < static_cast<long>(B) * M; ++bi) {
        const int b = static_cast<int>(bi / M);
        const int i = static_cast<int>(bi % M);
        double acc = 0.0;
        for (int h = 0; h < H; ++h) {
            double inner = 0.0;
            for (int q = 0; q < N; ++q) inner += attn.at(b, h, q, i + 1);
            acc += inner / N;
        }
        out[static_cast<std::size_t>(bi)] = acc / H;
    }
    return out;
}

std::vector<double> cls_attention(const AttentionMap& attn) {
    const int B = attn.batch, H = attn.heads, N = attn.tokens;
    check_attention(attn);
    const int M = N - 1;
    std::vector<double> out(static_cast<std::size_t>(B) * M);
    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < M; ++i) {
            double acc = 0.0;
            for (int h = 0; h < H; ++h) acc += attn.at(b, h, 0, i + 1);
            out[static_cast<std::size_t>(b) * M + i] = acc / H;
        }
    }
    return out;
}

std::vector<double> neighbor_awareness(const std::vector<double>& r_attn, int batch, int count,
                                       const NeighborKernel& kernel) {
    if (r_attn.size() != static_cast<std::size_t>(batch) * count) {
        throw ShapeError("received-attention buffer does not match batch x count");
    }
    std::vector<double> out(r_attn.size());
#pragma omp parallel for schedule(static)
    for (long bi = 0; bi < static_cast<long>(batch) * count; ++bi) {
        const int b = static_cast<int>(bi / count);
        const int i = static_cast<int>(bi % count);
        const double* row = r_attn.data() + static_cast<std::size_t>(b) * count;
        double acc = 0.0;
        for (int d = -kernel.radius; d <= kernel.radius; ++d) {
            const int j = i + d;
            if (j < 0 || j >= count) continue;  // outside the sequence, counts as zero
            acc += kernel.at(d) * row[j];
        }
        out[static_cast<std::size_t>(bi)] = acc;
    }
    return out;
}

ImportanceVector importance(std::vector<double> cls_attn, std::vector<double> phi, int batch,
                            int count, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
    const std::size_t n = static_cast<std::size_t>(batch) * count;
    if (cls_attn.size() != n || phi.size() != n) {
        throw ShapeError("importance inputs must be batch x count");
    }
    ImportanceVector iv;
    iv.batch = batch;
    iv.count = count;
    iv.alpha = alpha;
    iv.cls_attn = std::move(cls_attn);
    iv.phi = std::move(phi);
    iv.xi.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        iv.xi[i] = (1.0 - alpha) * iv.cls_attn[i] + alpha * iv.phi[i];
    }
    return iv;
}

ImportanceVector score_tokens(const AttentionMap& attn, const NeighborKernel& kernel,
                              double alpha) {
    std::vector<double> r_attn = received_attention(attn);
    const int count = attn.tokens - 1;
    std::vector<double> phi = neighbor_awareness(r_attn, attn.batch, count, kernel);
    ImportanceVector iv = importance(cls_attention(attn), std::move(phi), attn.batch, count, alpha);
    iv.r_attn = std::move(r_attn);
    return iv;
}

namespace {

// Merge of sorted provenance lists.
std::vector<std::uint32_t> union_provenance(const TokenBatch& batch, int b,
                                            const std::vector<int>& tokens) {
    std::vector<std::uint32_t> merged;
    for (int t : tokens) {
        const auto& cells = batch.prov(b, t);
        std::vector<std::uint32_t> next;
        next.reserve(merged.size() + cells.size());
        std::merge(merged.begin(), merged.end(), cells.begin(), cells.end(),
                   std::back_inserter(next));
        merged = std::move(next);
    }
    return merged;
}

}  // namespace

PruneResult prune_to_count(const TokenBatch& batch, const std::vector<double>& xi,
                           int keep_count, FusedWeighting weighting, int absorb_token) {
    batch.validate();
    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    if (xi.size() != static_cast<std::size_t>(batch.batch) * M) {
        throw ShapeError("importance scores must cover every non-protected token");
    }
    const bool absorbing = absorb_token >= 0;
    if (absorbing && (absorb_token < p || absorb_token >= batch.tokens)) {
        throw std::invalid_argument("absorb token index out of range");
    }
    const int candidates = M - (absorbing ? 1 : 0);
    if (keep_count < 0 || keep_count > candidates) {
        throw std::invalid_argument("keep count out of range: " + std::to_string(keep_count));
    }

    const int discarded = candidates - keep_count;
    const bool makes_fused = discarded > 0 || absorbing;
    const int out_tokens = p + keep_count + (makes_fused ? 1 : 0);

    PruneResult result;
    result.tokens = TokenBatch::zeros(batch.batch, out_tokens, batch.channels, p, batch.grid);
    result.plan.keep_ratio = candidates > 0 ? static_cast<double>(keep_count) / candidates : 1.0;
    result.plan.samples.resize(static_cast<std::size_t>(batch.batch));

    std::vector<int> ranked(static_cast<std::size_t>(candidates));
    for (int b = 0; b < batch.batch; ++b) {
        const double* scores = xi.data() + static_cast<std::size_t>(b) * M;

        int next = 0;
        for (int t = p; t < batch.tokens; ++t) {
            if (t != absorb_token) ranked[static_cast<std::size_t>(next++)] = t;
        }
        // Highest importance first; equal scores keep the earlier token.
        std::stable_sort(ranked.begin(), ranked.end(), [&](int lhs, int rhs) {
            return scores[lhs - p] > scores[rhs - p];
        });

        auto& sample = result.plan.samples[static_cast<std::size_t>(b)];
        sample.keep.assign(ranked.begin(), ranked.begin() + keep_count);
        std::sort(sample.keep.begin(), sample.keep.end());
        sample.fused_sources.assign(ranked.begin() + keep_count, ranked.end());
        if (absorbing) sample.fused_sources.push_back(absorb_token);
        std::sort(sample.fused_sources.begin(), sample.fused_sources.end());

        for (int t = 0; t < p; ++t) {
            std::memcpy(result.tokens.token(b, t), batch.token(b, t),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            result.tokens.size(b, t) = batch.size(b, t);
            result.tokens.prov(b, t) = batch.prov(b, t);
        }
        for (int i = 0; i < keep_count; ++i) {
            const int src = sample.keep[static_cast<std::size_t>(i)];
            std::memcpy(result.tokens.token(b, p + i), batch.token(b, src),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            result.tokens.size(b, p + i) = batch.size(b, src);
            result.tokens.prov(b, p + i) = batch.prov(b, src);
        }

        if (!makes_fused) continue;

        const int fused = out_tokens - 1;
        double* dst = result.tokens.token(b, fused);
        if (sample.fused_sources.size() == 1) {
            const int src = sample.fused_sources[0];
            std::memcpy(dst, batch.token(b, src),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
        } else {
            double weight_sum = 0.0;
            if (weighting == FusedWeighting::Xi) {
                for (int src : sample.fused_sources) weight_sum += scores[src - p];
            }
            const bool uniform = weighting == FusedWeighting::Uniform || !(weight_sum > 0.0);
            if (uniform) weight_sum = static_cast<double>(sample.fused_sources.size());
            for (int src : sample.fused_sources) {
                const double w = uniform ? 1.0 : scores[src - p];
                const double* feat = batch.token(b, src);
                for (int c = 0; c < batch.channels; ++c) dst[c] += w * feat[c];
            }
            for (int c = 0; c < batch.channels; ++c) dst[c] /= weight_sum;
        }

        double size_sum = 0.0;
        for (int src : sample.fused_sources) size_sum += batch.size(b, src);
        result.tokens.size(b, fused) = size_sum;
        result.tokens.prov(b, fused) = union_provenance(batch, b, sample.fused_sources);
    }
    return result;
}

PruneResult prune(const TokenBatch& batch, const std::vector<double>& xi, double keep_ratio,
                  FusedWeighting weighting) {
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
        throw std::invalid_argument("keep_ratio must lie in (0, 1]");
    }
    const int M = batch.image_tokens();
    const int keep = static_cast<int>(std::ceil(keep_ratio * M));
    PruneResult result = prune_to_count(batch, xi, std::min(keep, M), weighting);
    result.plan.keep_ratio = keep_ratio;
    return result;
}

}  // namespace napmat::nap
