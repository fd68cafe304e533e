// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/mat.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "napmat/detail/vecmath.hpp"
#include "napmat/errors.hpp"

namespace napmat::mat {
namespace {

// Per-token feature rows for the configured similarity source.
struct FeatureMatrix {
    int dim = 0;
    std::vector<double> rows;  // batch * mergeable * dim

    const double* row(int b, int count, int i) const {
        return rows.data() + (static_cast<std::size_t>(b) * count + i) * dim;
    }
};

FeatureMatrix extract_features(const TokenBatch& batch, const KeyTensor* keys,
                               Feature feature) {
    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    FeatureMatrix fm;

    if (feature == Feature::X) {
        fm.dim = batch.channels;
        fm.rows.resize(static_cast<std::size_t>(batch.batch) * M * fm.dim);
        for (int b = 0; b < batch.batch; ++b) {
            for (int i = 0; i < M; ++i) {
                std::memcpy(&fm.rows[(static_cast<std::size_t>(b) * M + i) * fm.dim],
                            batch.token(b, p + i), sizeof(double) * static_cast<std::size_t>(fm.dim));
            }
        }
        return fm;
    }

    if (keys == nullptr) {
        throw ConfigError("key-based similarity feature requires key vectors");
    }
    if (keys->batch != batch.batch || keys->tokens != batch.tokens) {
        throw ShapeError("key tensor does not match the token batch");
    }
    const int H = keys->heads, D = keys->head_dim;

    if (feature == Feature::KMean) {
        fm.dim = D;
        fm.rows.assign(static_cast<std::size_t>(batch.batch) * M * D, 0.0);
        for (int b = 0; b < batch.batch; ++b) {
            for (int i = 0; i < M; ++i) {
                double* dst = &fm.rows[(static_cast<std::size_t>(b) * M + i) * D];
                for (int h = 0; h < H; ++h) {
                    const double* key = keys->key(b, h, p + i);
                    for (int d = 0; d < D; ++d) dst[d] += key[d];
                }
                for (int d = 0; d < D; ++d) dst[d] /= H;
            }
        }
        return fm;
    }

    // Feature::KL2Norm: unit-normalize each head's key, then concatenate.
    fm.dim = H * D;
    fm.rows.assign(static_cast<std::size_t>(batch.batch) * M * fm.dim, 0.0);
    for (int b = 0; b < batch.batch; ++b) {
        for (int i = 0; i < M; ++i) {
            double* dst = &fm.rows[(static_cast<std::size_t>(b) * M + i) * fm.dim];
            for (int h = 0; h < H; ++h) {
                const double* key = keys->key(b, h, p + i);
                double norm = 0.0;
                for (int d = 0; d < D; ++d) norm += key[d] * key[d];
                norm = std::sqrt(norm);
                if (norm > 0.0) {
                    for (int d = 0; d < D; ++d) dst[h * D + d] = key[d] / norm;
                }
            }
        }
    }
    return fm;
}

}  // namespace

std::string_view to_string(Metric metric) {
    return metric == Metric::Cosine ? "cosine" : "symkl";
}

std::string_view to_string(Feature feature) {
    switch (feature) {
        case Feature::KMean: return "kmean";
        case Feature::X: return "x";
        case Feature::KL2Norm: return "kl2norm";
    }
    return "unknown";
}

Metric parse_metric(std::string_view name) {
    if (name == "cosine" || name == "cos") return Metric::Cosine;
    if (name == "symkl" || name == "kl") return Metric::SymmetricKL;
    throw ConfigError("unknown similarity metric: " + std::string(name));
}

Feature parse_feature(std::string_view name) {
    if (name == "kmean" || name == "k-mean") return Feature::KMean;
    if (name == "x") return Feature::X;
    if (name == "kl2norm" || name == "k-l2norm") return Feature::KL2Norm;
    throw ConfigError("unknown similarity feature: " + std::string(name));
}

// TODO: widen the candidate set from adjacent pairs to small sequence
// blocks, scoring all pairs inside each block; helps at high merge rates
// where the best partner is near but not the immediate neighbor.
std::vector<double> adjacent_similarity(const TokenBatch& batch, const KeyTensor* keys,
                                        const SimilarityConfig& cfg) {
    batch.validate();
    const int M = batch.image_tokens();
    if (M < 2) throw std::invalid_argument("need at least two mergeable tokens");
    const int pairs = M - 1;

    const FeatureMatrix fm = extract_features(batch, keys, cfg.feature);
    std::vector<double> scores(static_cast<std::size_t>(batch.batch) * pairs);

    if (cfg.metric == Metric::Cosine) {
#pragma omp parallel for schedule(static)
        for (long bj = 0; bj < static_cast<long>(batch.batch) * pairs; ++bj) {
            const int b = static_cast<int>(bj / pairs);
            const int j = static_cast<int>(bj % pairs);
            scores[static_cast<std::size_t>(bj)] =
                detail::cosine_pair(fm.row(b, M, j), fm.row(b, M, j + 1), fm.dim);
        }
    } else {
        // Softmax-normalize every token once, then score the pairs.
        std::vector<double> dist(static_cast<std::size_t>(batch.batch) * M * fm.dim);
#pragma omp parallel for schedule(static)
        for (long bi = 0; bi < static_cast<long>(batch.batch) * M; ++bi) {
            detail::softmax_row(fm.rows.data() + static_cast<std::size_t>(bi) * fm.dim,
                        dist.data() + static_cast<std::size_t>(bi) * fm.dim, fm.dim);
        }
#pragma omp parallel for schedule(static)
        for (long bj = 0; bj < static_cast<long>(batch.batch) * pairs; ++bj) {
            const int b = static_cast<int>(bj / pairs);
            const int j = static_cast<int>(bj % pairs);
            const double* p = dist.data() + (static_cast<std::size_t>(b) * M + j) * fm.dim;
            scores[static_cast<std::size_t>(bj)] = detail::neg_symmetric_kl(p, p + fm.dim, fm.dim);
        }
    }
    return scores;
}

std::vector<int> select_pairs(std::span<const double> scores, int r) {
    const int n = static_cast<int>(scores.size());
    if (r < 0 || r > n) throw std::invalid_argument("merge count out of range");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int lhs, int rhs) {
        if (scores[static_cast<std::size_t>(lhs)] != scores[static_cast<std::size_t>(rhs)]) {
            return scores[static_cast<std::size_t>(lhs)] > scores[static_cast<std::size_t>(rhs)];
        }
        return lhs < rhs;
    });
    idx.resize(static_cast<std::size_t>(r));
    std::sort(idx.begin(), idx.end());
    return idx;
}

Destinations resolve_destinations(std::span<const int> selected) {
    Destinations out;
    out.dest.assign(selected.begin(), selected.end());
    out.source.resize(selected.size());
    out.filled.resize(selected.size());
    int run_start = 0;
    for (std::size_t k = 0; k < selected.size(); ++k) {
        if (k > 0 && selected[k] <= selected[k - 1]) {
            throw std::invalid_argument("selected indices must be ascending and distinct");
        }
        out.source[k] = selected[k] + 1;
        // A gap wider than one step starts a new merge interval; inside a
        // run every destination is redirected to the run's first index.
        if (k == 0 || selected[k] - selected[k - 1] > 1) run_start = selected[k];
        out.filled[k] = run_start;
    }
    return out;
}

TokenBatch merge(const TokenBatch& batch, std::span<const MergePlan> plans) {
    batch.validate();
    if (plans.size() != static_cast<std::size_t>(batch.batch)) {
        throw std::logic_error("merge: one plan per sample required");
    }
    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    const int r = plans.empty() ? 0 : plans[0].r;
    for (const auto& plan : plans) {
        if (plan.r != r || static_cast<int>(plan.dests.source.size()) != r) {
            throw std::logic_error("merge: inconsistent plan sizes across the batch");
        }
    }
    if (r == 0) return batch;

    TokenBatch out =
        TokenBatch::zeros(batch.batch, batch.tokens - r, batch.channels, p, batch.grid);

    for (int b = 0; b < batch.batch; ++b) {
        const auto& d = plans[static_cast<std::size_t>(b)].dests;
        std::vector<signed char> is_source(static_cast<std::size_t>(M), 0);
        for (int s : d.source) {
            if (s < 0 || s >= M) throw std::logic_error("merge: source index out of range");
            if (is_source[static_cast<std::size_t>(s)]) {
                throw std::logic_error("merge: duplicate source index");
            }
            is_source[static_cast<std::size_t>(s)] = 1;
        }

        for (int t = 0; t < p; ++t) {
            std::memcpy(out.token(b, t), batch.token(b, t),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            out.size(b, t) = batch.size(b, t);
            out.prov(b, t) = batch.prov(b, t);
        }

        int write = p;
        std::size_t k = 0;
        for (int local = 0; local < M; ++local) {
            if (is_source[static_cast<std::size_t>(local)]) continue;
            const int src = p + local;
            double* dst = out.token(b, write);
            std::memcpy(dst, batch.token(b, src),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            out.size(b, write) = batch.size(b, src);
            out.prov(b, write) = batch.prov(b, src);

            // Fold in every source filled onto this destination; they are
            // contiguous in the plan because filled is non-decreasing.
            while (k < d.filled.size() && d.filled[k] < local) ++k;
            if (k < d.filled.size() && d.filled[k] == local) {
                double weight_sum = batch.size(b, src);
                for (int c = 0; c < batch.channels; ++c) dst[c] *= weight_sum;
                auto prov = batch.prov(b, src);
                std::size_t e = k;
                while (e < d.filled.size() && d.filled[e] == local) {
                    const int src_tok = p + d.source[e];
                    const double w = batch.size(b, src_tok);
                    const double* feat = batch.token(b, src_tok);
                    for (int c = 0; c < batch.channels; ++c) dst[c] += w * feat[c];
                    weight_sum += w;
                    const auto& cells = batch.prov(b, src_tok);
                    std::vector<std::uint32_t> next;
                    next.reserve(prov.size() + cells.size());
                    std::merge(prov.begin(), prov.end(), cells.begin(), cells.end(),
                               std::back_inserter(next));
                    prov = std::move(next);
                    ++e;
                }
                for (int c = 0; c < batch.channels; ++c) dst[c] /= weight_sum;
                out.size(b, write) = weight_sum;
                out.prov(b, write) = std::move(prov);
                k = e;
            }
            ++write;
        }
        if (write != out.tokens) throw std::logic_error("merge: survivor count mismatch");
        if (k != d.filled.size()) {
            throw std::logic_error("merge: unconsumed merge groups (plan routes into a source)");
        }
    }
    return out;
}

MatResult mat_reduce(const TokenBatch& batch, const KeyTensor* keys, const SimilarityConfig& cfg,
                     int r) {
    const int M = batch.image_tokens();
    if (r == 0) {
        MatResult identity{batch, {}};
        identity.plans.resize(static_cast<std::size_t>(batch.batch));
        return identity;
    }
    if (M < 2) throw std::invalid_argument("need at least two mergeable tokens");
    const int pairs = M - 1;

    const std::vector<double> scores = adjacent_similarity(batch, keys, cfg);

    MatResult result;
    result.plans.resize(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) {
        auto& plan = result.plans[static_cast<std::size_t>(b)];
        plan.scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(b) * pairs,
                           scores.begin() + static_cast<std::ptrdiff_t>(b + 1) * pairs);
        plan.r = r;
        plan.selected = select_pairs(plan.scores, r);
        plan.dests = resolve_destinations(plan.selected);
    }
    result.tokens = merge(batch, result.plans);
    return result;
}

}  // namespace napmat::mat
