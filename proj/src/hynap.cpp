// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/hynap.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "napmat/detail/vecmath.hpp"
#include "napmat/errors.hpp"

namespace napmat::hynap {
namespace {

// Head-averaged key vector of one token.
std::vector<double> mean_key(const KeyTensor& keys, int b, int t) {
    std::vector<double> out(static_cast<std::size_t>(keys.head_dim), 0.0);
    for (int h = 0; h < keys.heads; ++h) {
        const double* key = keys.key(b, h, t);
        for (int d = 0; d < keys.head_dim; ++d) out[static_cast<std::size_t>(d)] += key[d];
    }
    for (auto& v : out) v /= keys.heads;
    return out;
}

std::vector<std::uint32_t> merge_provenance(const std::vector<std::uint32_t>& a,
                                            const std::vector<std::uint32_t>& b) {
    std::vector<std::uint32_t> out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

BsmResult bsm_merge(const TokenBatch& batch, const KeyTensor& keys, int r,
                    const std::vector<std::vector<int>>& ranking) {
    batch.validate();
    if (keys.batch != batch.batch || keys.tokens != batch.tokens) {
        throw ShapeError("key tensor does not match the token batch");
    }
    if (r < 0) throw std::invalid_argument("merge count must be >= 0");
    if (r == 0) {
        BsmResult identity{batch, {}};
        identity.plans.resize(static_cast<std::size_t>(batch.batch));
        return identity;
    }
    if (!ranking.empty() && ranking.size() != static_cast<std::size_t>(batch.batch)) {
        throw ShapeError("ranking must cover every sample");
    }

    const int p = batch.protected_count;
    BsmResult result;
    result.plans.resize(static_cast<std::size_t>(batch.batch));
    result.tokens = TokenBatch::zeros(batch.batch, batch.tokens - r, batch.channels, p, batch.grid);

    std::vector<int> default_ranking;
    if (ranking.empty()) {
        default_ranking.resize(static_cast<std::size_t>(batch.image_tokens()));
        std::iota(default_ranking.begin(), default_ranking.end(), p);
    }

    for (int b = 0; b < batch.batch; ++b) {
        const std::vector<int>& cand =
            ranking.empty() ? default_ranking : ranking[static_cast<std::size_t>(b)];
        const int n = static_cast<int>(cand.size());
        if (2 * r >= n) {
            throw std::invalid_argument("merge count " + std::to_string(r) +
                                        " must be under half of " + std::to_string(n) +
                                        " candidates");
        }
        std::vector<signed char> seen(static_cast<std::size_t>(batch.tokens), 0);
        for (int t : cand) {
            if (t < p || t >= batch.tokens || seen[static_cast<std::size_t>(t)]) {
                throw std::invalid_argument("ranking must list distinct non-protected tokens");
            }
            seen[static_cast<std::size_t>(t)] = 1;
        }

        // Alternate ranks into the two matching sets.
        std::vector<int> set_a, set_b;
        for (int i = 0; i < n; ++i) {
            ((i % 2 == 0) ? set_a : set_b).push_back(cand[static_cast<std::size_t>(i)]);
        }

        std::vector<std::vector<double>> b_keys;
        b_keys.reserve(set_b.size());
        for (int t : set_b) b_keys.push_back(mean_key(keys, b, t));

        // Best partner in B for every A token; ties pick the lower token index.
        struct Link {
            int a = -1, dest = -1;
            double sim = 0.0;
        };
        std::vector<Link> links;
        links.reserve(set_a.size());
        for (int a_tok : set_a) {
            const std::vector<double> a_key = mean_key(keys, b, a_tok);
            Link link;
            link.a = a_tok;
            for (std::size_t j = 0; j < set_b.size(); ++j) {
                const double sim =
                    detail::cosine_pair(a_key.data(), b_keys[j].data(), keys.head_dim);
                if (link.dest < 0 || sim > link.sim ||
                    (sim == link.sim && set_b[j] < link.dest)) {
                    link.sim = sim;
                    link.dest = set_b[j];
                }
            }
            links.push_back(link);
        }

        // Keep the r strongest links, ties won by the lower source index.
        std::sort(links.begin(), links.end(), [](const Link& lhs, const Link& rhs) {
            if (lhs.sim != rhs.sim) return lhs.sim > rhs.sim;
            return lhs.a < rhs.a;
        });
        links.resize(static_cast<std::size_t>(r));
        std::sort(links.begin(), links.end(),
                  [](const Link& lhs, const Link& rhs) { return lhs.a < rhs.a; });

        auto& plan = result.plans[static_cast<std::size_t>(b)];
        for (const Link& link : links) plan.merged.push_back({link.a, link.dest, link.sim});

        // Fold each destination's sources (ascending) in a single pass.
        std::vector<Link> by_dest = links;
        std::sort(by_dest.begin(), by_dest.end(), [](const Link& lhs, const Link& rhs) {
            if (lhs.dest != rhs.dest) return lhs.dest < rhs.dest;
            return lhs.a < rhs.a;
        });

        std::vector<double> feat(
            batch.features.begin() + static_cast<std::ptrdiff_t>(b) * batch.tokens * batch.channels,
            batch.features.begin() +
                static_cast<std::ptrdiff_t>(b + 1) * batch.tokens * batch.channels);
        std::vector<double> size(batch.sizes.begin() + static_cast<std::ptrdiff_t>(b) * batch.tokens,
                                 batch.sizes.begin() +
                                     static_cast<std::ptrdiff_t>(b + 1) * batch.tokens);
        std::vector<std::vector<std::uint32_t>> prov(
            batch.provenance.begin() + static_cast<std::ptrdiff_t>(b) * batch.tokens,
            batch.provenance.begin() + static_cast<std::ptrdiff_t>(b + 1) * batch.tokens);

        std::vector<signed char> removed(static_cast<std::size_t>(batch.tokens), 0);
        for (std::size_t i = 0; i < by_dest.size();) {
            const int dest = by_dest[i].dest;
            double* dst = feat.data() + static_cast<std::size_t>(dest) * batch.channels;
            double weight_sum = size[static_cast<std::size_t>(dest)];
            for (int c = 0; c < batch.channels; ++c) dst[c] *= weight_sum;
            std::size_t j = i;
            while (j < by_dest.size() && by_dest[j].dest == dest) {
                const int src = by_dest[j].a;
                removed[static_cast<std::size_t>(src)] = 1;
                const double w = size[static_cast<std::size_t>(src)];
                const double* sfeat = feat.data() + static_cast<std::size_t>(src) * batch.channels;
                for (int c = 0; c < batch.channels; ++c) dst[c] += w * sfeat[c];
                weight_sum += w;
                prov[static_cast<std::size_t>(dest)] = merge_provenance(
                    prov[static_cast<std::size_t>(dest)], prov[static_cast<std::size_t>(src)]);
                ++j;
            }
            for (int c = 0; c < batch.channels; ++c) dst[c] /= weight_sum;
            size[static_cast<std::size_t>(dest)] = weight_sum;
            i = j;
        }

        int write = 0;
        for (int t = 0; t < batch.tokens; ++t) {
            if (removed[static_cast<std::size_t>(t)]) continue;
            std::memcpy(result.tokens.token(b, write),
                        feat.data() + static_cast<std::size_t>(t) * batch.channels,
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            result.tokens.size(b, write) = size[static_cast<std::size_t>(t)];
            result.tokens.prov(b, write) = std::move(prov[static_cast<std::size_t>(t)]);
            ++write;
        }
        if (write != result.tokens.tokens) throw std::logic_error("bsm: survivor count mismatch");
    }
    return result;
}

HynapResult hynap_layer(const TokenBatch& batch, const AttentionMap& attn,
                        const KeyTensor& keys, HybridStep step, const NapOptions& options,
                        int absorb_token) {
    batch.validate();
    if (batch.protected_count != 1) {
        throw std::invalid_argument("hybrid reduction expects exactly one protected class token");
    }
    if (attn.batch != batch.batch || attn.tokens != batch.tokens) {
        throw ShapeError("attention map does not match the token batch");
    }
    if (step.prune_count < 0 || step.merge_count < 0) {
        throw std::invalid_argument("reduction counts must be >= 0");
    }
    if (step.prune_count + step.merge_count >= batch.tokens) {
        throw std::invalid_argument("reduction counts exceed the token budget");
    }

    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    const int candidates = M - (absorb_token >= 0 ? 1 : 0);
    if (step.prune_count > candidates) {
        throw std::invalid_argument("prune count exceeds candidate tokens");
    }

    const nap::NeighborKernel kernel = nap::build_kernel(options.radius);
    const nap::ImportanceVector iv = nap::score_tokens(attn, kernel, options.alpha);

    HynapResult result;
    const bool pruned = step.prune_count > 0;
    if (pruned) {
        nap::PruneResult pr = nap::prune_to_count(batch, iv.xi, candidates - step.prune_count,
                                                  options.weighting, absorb_token);
        result.plan.prune = std::move(pr.plan);
        result.tokens = std::move(pr.tokens);
    } else {
        result.tokens = batch;
    }

    if (step.merge_count == 0) return result;

    // Keys re-gathered for the post-prune layout. The aggregate token
    // never took part in this layer's attention and stays out of the
    // matching, so its key slot can remain zero.
    KeyTensor gathered;
    gathered.batch = keys.batch;
    gathered.heads = keys.heads;
    gathered.tokens = result.tokens.tokens;
    gathered.head_dim = keys.head_dim;
    gathered.values.assign(static_cast<std::size_t>(gathered.batch) * gathered.heads *
                               gathered.tokens * gathered.head_dim,
                           0.0);

    std::vector<std::vector<int>> ranking(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) {
        // (new index, original index) of every bsm candidate.
        std::vector<std::pair<int, int>> cand;
        if (pruned) {
            const auto& keep = result.plan.prune.samples[static_cast<std::size_t>(b)].keep;
            cand.reserve(keep.size());
            for (std::size_t i = 0; i < keep.size(); ++i) {
                cand.emplace_back(p + static_cast<int>(i), keep[i]);
            }
        } else {
            for (int t = p; t < batch.tokens; ++t) {
                if (t != absorb_token) cand.emplace_back(t, t);
            }
        }

        for (int t = 0; t < p; ++t) {
            for (int h = 0; h < keys.heads; ++h) {
                std::memcpy(gathered.key(b, h, t), keys.key(b, h, t),
                            sizeof(double) * static_cast<std::size_t>(keys.head_dim));
            }
        }
        for (const auto& [nt, ot] : cand) {
            for (int h = 0; h < keys.heads; ++h) {
                std::memcpy(gathered.key(b, h, nt), keys.key(b, h, ot),
                            sizeof(double) * static_cast<std::size_t>(keys.head_dim));
            }
        }

        // Most important first; stable sort keeps lower original index on ties.
        const double* xi = iv.xi.data() + static_cast<std::size_t>(b) * M;
        std::stable_sort(cand.begin(), cand.end(), [&](const auto& lhs, const auto& rhs) {
            return xi[lhs.second - p] > xi[rhs.second - p];
        });
        auto& order = ranking[static_cast<std::size_t>(b)];
        order.reserve(cand.size());
        for (const auto& [nt, ot] : cand) order.push_back(nt);
    }

    BsmResult merged = bsm_merge(result.tokens, gathered, step.merge_count, ranking);
    result.plan.bsm = std::move(merged.plans);
    result.tokens = std::move(merged.tokens);
    return result;
}

}  // namespace napmat::hynap
