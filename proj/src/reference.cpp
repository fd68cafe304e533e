// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/reference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "napmat/errors.hpp"

namespace napmat::ref {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Feature vector a merge metric sees for one mergeable token.
std::vector<double> merge_feature(const TokenBatch& batch, const KeyTensor* keys,
                                  mat::Feature feature, int b, int local) {
    const int p = batch.protected_count;
    const int t = p + local;
    if (feature == mat::Feature::X) {
        const double* feat = batch.token(b, t);
        return {feat, feat + batch.channels};
    }
    if (keys == nullptr) throw ConfigError("key-based similarity feature requires key vectors");
    const int H = keys->heads, D = keys->head_dim;
    if (feature == mat::Feature::KMean) {
        std::vector<double> out(static_cast<std::size_t>(D), 0.0);
        for (int h = 0; h < H; ++h) {
            const double* key = keys->key(b, h, t);
            for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(d)] += key[d];
        }
        for (auto& v : out) v /= H;
        return out;
    }
    std::vector<double> out(static_cast<std::size_t>(H) * D, 0.0);
    for (int h = 0; h < H; ++h) {
        const double* key = keys->key(b, h, t);
        double norm = 0.0;
        for (int d = 0; d < D; ++d) norm += key[d] * key[d];
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(h * D + d)] = key[d] / norm;
        }
    }
    return out;
}

// Same arithmetic shape as the kernel's scorer (normalize, then dot) so
// selections agree bit for bit.
double pair_score(const std::vector<double>& a, const std::vector<double>& b,
                  mat::Metric metric) {
    const int dim = static_cast<int>(a.size());
    if (metric == mat::Metric::Cosine) {
        double na = 0.0, nb = 0.0;
        for (int d = 0; d < dim; ++d) na += a[static_cast<std::size_t>(d)] * a[static_cast<std::size_t>(d)];
        for (int d = 0; d < dim; ++d) nb += b[static_cast<std::size_t>(d)] * b[static_cast<std::size_t>(d)];
        if (!(na > 0.0) || !(nb > 0.0)) return kNegInf;
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        double dot = 0.0;
        for (int d = 0; d < dim; ++d) {
            dot += (a[static_cast<std::size_t>(d)] / na) * (b[static_cast<std::size_t>(d)] / nb);
        }
        return dot;
    }
    std::vector<double> pd(a.size()), qd(a.size());
    auto softmax = [dim](const std::vector<double>& x, std::vector<double>& y) {
        double mx = x[0];
        for (int d = 1; d < dim; ++d) mx = std::max(mx, x[static_cast<std::size_t>(d)]);
        double sum = 0.0;
        for (int d = 0; d < dim; ++d) {
            y[static_cast<std::size_t>(d)] = std::exp(x[static_cast<std::size_t>(d)] - mx);
            sum += y[static_cast<std::size_t>(d)];
        }
        for (int d = 0; d < dim; ++d) y[static_cast<std::size_t>(d)] /= sum;
    };
    softmax(a, pd);
    softmax(b, qd);
    double forward = 0.0, backward = 0.0;
    for (int d = 0; d < dim; ++d) {
        forward += pd[static_cast<std::size_t>(d)] * std::log(pd[static_cast<std::size_t>(d)] / qd[static_cast<std::size_t>(d)]);
        backward += qd[static_cast<std::size_t>(d)] * std::log(qd[static_cast<std::size_t>(d)] / pd[static_cast<std::size_t>(d)]);
    }
    return -0.5 * (forward + backward);
}

void layer_norm_ref(const double* x, double* y, int dim, double eps) {
    double mean = 0.0;
    for (int i = 0; i < dim; ++i) mean += x[i];
    mean /= dim;
    double var = 0.0;
    for (int i = 0; i < dim; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < dim; ++i) y[i] = (x[i] - mean) * inv;
}

}  // namespace

std::vector<double> received_attention(const AttentionMap& attn) {
    const int B = attn.batch, H = attn.heads, N = attn.tokens;
    if (N < 2) throw std::invalid_argument("attention map has no scorable tokens");
    const int M = N - 1;
    std::vector<double> out(static_cast<std::size_t>(B) * M, 0.0);
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            for (int q = 0; q < N; ++q) {
                for (int i = 0; i < M; ++i) {
                    out[static_cast<std::size_t>(b) * M + i] += attn.at(b, h, q, i + 1);
                }
            }
        }
        for (int i = 0; i < M; ++i) {
            out[static_cast<std::size_t>(b) * M + i] /= static_cast<double>(H) * N;
        }
    }
    return out;
}

std::vector<double> neighbor_awareness(const std::vector<double>& r_attn, int batch, int count,
                                       int radius) {
    double norm = 0.0;
    for (int u = -radius; u <= radius; ++u) norm += 1.0 / (std::abs(u) + 1);

    std::vector<double> out(static_cast<std::size_t>(batch) * count, 0.0);
    for (int b = 0; b < batch; ++b) {
        const double* row = r_attn.data() + static_cast<std::size_t>(b) * count;
        for (int i = 0; i < count; ++i) {
            double acc = 0.0;
            for (int d = radius; d >= -radius; --d) {
                const double w = (1.0 / (std::abs(d) + 1)) / norm;
                const int j = i + d;
                acc += w * ((j >= 0 && j < count) ? row[j] : 0.0);
            }
            out[static_cast<std::size_t>(b) * count + i] = acc;
        }
    }
    return out;
}

std::vector<double> adjacent_similarity(const TokenBatch& batch, const KeyTensor* keys,
                                        const mat::SimilarityConfig& cfg) {
    const int M = batch.image_tokens();
    if (M < 2) throw std::invalid_argument("need at least two mergeable tokens");
    const int pairs = M - 1;
    std::vector<double> scores(static_cast<std::size_t>(batch.batch) * pairs);
    for (int b = 0; b < batch.batch; ++b) {
        for (int j = 0; j < pairs; ++j) {
            const auto a = merge_feature(batch, keys, cfg.feature, b, j);
            const auto c = merge_feature(batch, keys, cfg.feature, b, j + 1);
            double score;
            if (cfg.metric == mat::Metric::Cosine) {
                // dot / (|a| |b|), algebraically the unit-vector inner product
                const int dim = static_cast<int>(a.size());
                double na = 0.0, nb = 0.0, dot = 0.0;
                for (int d = 0; d < dim; ++d) {
                    na += a[static_cast<std::size_t>(d)] * a[static_cast<std::size_t>(d)];
                    nb += c[static_cast<std::size_t>(d)] * c[static_cast<std::size_t>(d)];
                    dot += a[static_cast<std::size_t>(d)] * c[static_cast<std::size_t>(d)];
                }
                score = (na > 0.0 && nb > 0.0) ? dot / (std::sqrt(na) * std::sqrt(nb)) : kNegInf;
            } else {
                score = pair_score(a, c, mat::Metric::SymmetricKL);
            }
            scores[static_cast<std::size_t>(b) * pairs + j] = score;
        }
    }
    return scores;
}

TokenBatch mat_reduce(const TokenBatch& batch, const KeyTensor* keys,
                      const mat::SimilarityConfig& cfg, int r) {
    batch.validate();
    if (r == 0) return batch;
    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    if (M < 2) throw std::invalid_argument("need at least two mergeable tokens");
    const int pairs = M - 1;
    if (r < 0 || r > pairs) throw std::invalid_argument("merge count out of range");

    TokenBatch out = TokenBatch::zeros(batch.batch, batch.tokens - r, batch.channels, p, batch.grid);

    for (int b = 0; b < batch.batch; ++b) {
        std::vector<double> scores(static_cast<std::size_t>(pairs));
        for (int j = 0; j < pairs; ++j) {
            scores[static_cast<std::size_t>(j)] =
                pair_score(merge_feature(batch, keys, cfg.feature, b, j),
                           merge_feature(batch, keys, cfg.feature, b, j + 1), cfg.metric);
        }

        // Top-r by repeated scan; strict > keeps the earliest index on ties.
        std::vector<signed char> taken(static_cast<std::size_t>(pairs), 0);
        std::vector<int> selected;
        for (int round = 0; round < r; ++round) {
            int best = -1;
            for (int j = 0; j < pairs; ++j) {
                if (taken[static_cast<std::size_t>(j)]) continue;
                if (best < 0 || scores[static_cast<std::size_t>(j)] > scores[static_cast<std::size_t>(best)]) {
                    best = j;
                }
            }
            taken[static_cast<std::size_t>(best)] = 1;
            selected.push_back(best);
        }
        std::sort(selected.begin(), selected.end());

        // Destination of each selected pair: walk back to the start of its
        // run of consecutive indices.
        std::vector<int> fill(selected.size());
        for (std::size_t k = 0; k < selected.size(); ++k) {
            std::size_t start = k;
            while (start > 0 && selected[start] - selected[start - 1] == 1) --start;
            fill[k] = selected[start];
        }

        std::vector<signed char> is_source(static_cast<std::size_t>(M), 0);
        for (int j : selected) is_source[static_cast<std::size_t>(j + 1)] = 1;

        for (int t = 0; t < p; ++t) {
            std::memcpy(out.token(b, t), batch.token(b, t),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            out.size(b, t) = batch.size(b, t);
            out.prov(b, t) = batch.prov(b, t);
        }

        int write = p;
        for (int local = 0; local < M; ++local) {
            if (is_source[static_cast<std::size_t>(local)]) continue;
            const int src = p + local;
            double* dst = out.token(b, write);
            std::memcpy(dst, batch.token(b, src),
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            double weight = batch.size(b, src);
            auto prov = batch.prov(b, src);

            bool is_dest = false;
            for (std::size_t k = 0; k < fill.size(); ++k) {
                if (fill[k] == local) {
                    is_dest = true;
                    break;
                }
            }
            if (is_dest) {
                for (int c = 0; c < batch.channels; ++c) dst[c] *= weight;
                for (std::size_t k = 0; k < fill.size(); ++k) {
                    if (fill[k] != local) continue;
                    const int src_tok = p + selected[k] + 1;
                    const double w = batch.size(b, src_tok);
                    const double* feat = batch.token(b, src_tok);
                    for (int c = 0; c < batch.channels; ++c) dst[c] += w * feat[c];
                    weight += w;
                    std::vector<std::uint32_t> merged;
                    const auto& cells = batch.prov(b, src_tok);
                    std::merge(prov.begin(), prov.end(), cells.begin(), cells.end(),
                               std::back_inserter(merged));
                    prov = std::move(merged);
                }
                for (int c = 0; c < batch.channels; ++c) dst[c] /= weight;
            }
            out.size(b, write) = weight;
            out.prov(b, write) = std::move(prov);
            ++write;
        }
    }
    return out;
}

TokenBatch bsm_merge(const TokenBatch& batch, const KeyTensor& keys, int r,
                     const std::vector<std::vector<int>>& ranking) {
    batch.validate();
    if (r == 0) return batch;
    const int p = batch.protected_count;
    TokenBatch out = TokenBatch::zeros(batch.batch, batch.tokens - r, batch.channels, p, batch.grid);

    for (int b = 0; b < batch.batch; ++b) {
        std::vector<int> cand;
        if (ranking.empty()) {
            for (int t = p; t < batch.tokens; ++t) cand.push_back(t);
        } else {
            cand = ranking[static_cast<std::size_t>(b)];
        }
        if (2 * r >= static_cast<int>(cand.size())) {
            throw std::invalid_argument("merge count must be under half the candidates");
        }

        auto key_of = [&](int t) {
            std::vector<double> key(static_cast<std::size_t>(keys.head_dim), 0.0);
            for (int h = 0; h < keys.heads; ++h) {
                const double* kk = keys.key(b, h, t);
                for (int d = 0; d < keys.head_dim; ++d) key[static_cast<std::size_t>(d)] += kk[d];
            }
            for (auto& v : key) v /= keys.heads;
            return key;
        };
        auto cosine = [&](const std::vector<double>& a, const std::vector<double>& c) {
            double na = 0.0, nb = 0.0;
            for (double v : a) na += v * v;
            for (double v : c) nb += v * v;
            if (!(na > 0.0) || !(nb > 0.0)) return kNegInf;
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            double dot = 0.0;
            for (std::size_t d = 0; d < a.size(); ++d) dot += (a[d] / na) * (c[d] / nb);
            return dot;
        };

        // Exhaustive A x B similarity table.
        std::vector<int> set_a, set_b;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            ((i % 2 == 0) ? set_a : set_b).push_back(cand[i]);
        }
        struct Edge {
            int a, dest;
            double sim;
        };
        std::vector<Edge> best(set_a.size());
        for (std::size_t i = 0; i < set_a.size(); ++i) {
            const auto a_key = key_of(set_a[i]);
            Edge e{set_a[i], -1, 0.0};
            for (int bt : set_b) {
                const double sim = cosine(a_key, key_of(bt));
                if (e.dest < 0 || sim > e.sim || (sim == e.sim && bt < e.dest)) {
                    e.sim = sim;
                    e.dest = bt;
                }
            }
            best[i] = e;
        }

        std::vector<signed char> taken(best.size(), 0);
        std::vector<Edge> chosen;
        for (int round = 0; round < r; ++round) {
            int arg = -1;
            for (std::size_t i = 0; i < best.size(); ++i) {
                if (taken[i]) continue;
                if (arg < 0 || best[i].sim > best[static_cast<std::size_t>(arg)].sim ||
                    (best[i].sim == best[static_cast<std::size_t>(arg)].sim &&
                     best[i].a < best[static_cast<std::size_t>(arg)].a)) {
                    arg = static_cast<int>(i);
                }
            }
            taken[static_cast<std::size_t>(arg)] = 1;
            chosen.push_back(best[static_cast<std::size_t>(arg)]);
        }

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
        for (const Edge& e : chosen) removed[static_cast<std::size_t>(e.a)] = 1;

        // Destinations in ascending token order, sources ascending within.
        for (int dest = 0; dest < batch.tokens; ++dest) {
            std::vector<int> sources;
            for (const Edge& e : chosen) {
                if (e.dest == dest) sources.push_back(e.a);
            }
            if (sources.empty()) continue;
            std::sort(sources.begin(), sources.end());
            double* dst = feat.data() + static_cast<std::size_t>(dest) * batch.channels;
            double weight = size[static_cast<std::size_t>(dest)];
            for (int c = 0; c < batch.channels; ++c) dst[c] *= weight;
            for (int src : sources) {
                const double w = size[static_cast<std::size_t>(src)];
                const double* sfeat = feat.data() + static_cast<std::size_t>(src) * batch.channels;
                for (int c = 0; c < batch.channels; ++c) dst[c] += w * sfeat[c];
                weight += w;
                std::vector<std::uint32_t> merged;
                std::merge(prov[static_cast<std::size_t>(dest)].begin(),
                           prov[static_cast<std::size_t>(dest)].end(),
                           prov[static_cast<std::size_t>(src)].begin(),
                           prov[static_cast<std::size_t>(src)].end(), std::back_inserter(merged));
                prov[static_cast<std::size_t>(dest)] = std::move(merged);
            }
            for (int c = 0; c < batch.channels; ++c) dst[c] /= weight;
            size[static_cast<std::size_t>(dest)] = weight;
        }

        int write = 0;
        for (int t = 0; t < batch.tokens; ++t) {
            if (removed[static_cast<std::size_t>(t)]) continue;
            std::memcpy(out.token(b, write), feat.data() + static_cast<std::size_t>(t) * batch.channels,
                        sizeof(double) * static_cast<std::size_t>(batch.channels));
            out.size(b, write) = size[static_cast<std::size_t>(t)];
            out.prov(b, write) = std::move(prov[static_cast<std::size_t>(t)]);
            ++write;
        }
    }
    return out;
}

double locality_score(const CurveOrder& order, int radius, CellDistance metric) {
    const int n = static_cast<int>(order.perm.size());
    if (radius < 1 || radius >= n) throw std::invalid_argument("bad locality radius");
    double total = 0.0;
    int count = 0;
    for (int k = 0; k + radius < n; ++k) {
        const Cell a = order.perm[static_cast<std::size_t>(k)];
        const Cell b = order.perm[static_cast<std::size_t>(k + radius)];
        const int dr = std::abs(a.row - b.row);
        const int dc = std::abs(a.col - b.col);
        total += (metric == CellDistance::Manhattan) ? dr + dc : std::max(dr, dc);
        ++count;
    }
    return total / count;
}

AttentionResult attention_forward(const TokenBatch& batch, const BlockConfig& cfg, int layer,
                                  int silent_token) {
    batch.validate();
    cfg.validate();
    const BlockWeights weights = block_weights(cfg, layer);
    const int B = batch.batch, T = batch.tokens, C = cfg.dim;
    const int H = cfg.heads, D = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    auto matvec = [](const std::vector<double>& w, const double* x, double* y, int out_dim,
                     int in_dim) {
        for (int o = 0; o < out_dim; ++o) {
            double acc = 0.0;
            for (int i = 0; i < in_dim; ++i) acc += w[static_cast<std::size_t>(o) * in_dim + i] * x[i];
            y[o] = acc;
        }
    };

    std::vector<double> q(static_cast<std::size_t>(B) * T * C), k(q.size()), v(q.size());
    std::vector<double> normed(static_cast<std::size_t>(C));
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
            layer_norm_ref(batch.token(b, t), normed.data(), C, cfg.layer_norm_eps);
            const std::size_t off = (static_cast<std::size_t>(b) * T + t) * C;
            matvec(weights.wq, normed.data(), q.data() + off, C, C);
            matvec(weights.wk, normed.data(), k.data() + off, C, C);
            matvec(weights.wv, normed.data(), v.data() + off, C, C);
        }
    }

    AttentionResult result;
    result.attn = {B, H, T, std::vector<double>(static_cast<std::size_t>(B) * H * T * T, 0.0)};
    result.keys = {B, H, T, D, std::vector<double>(static_cast<std::size_t>(B) * H * T * D)};
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const double* src = k.data() + (static_cast<std::size_t>(b) * T + t) * C + h * D;
                std::copy(src, src + D, result.keys.key(b, h, t));
            }
        }
    }

    std::vector<double> heads_out(static_cast<std::size_t>(B) * T * C, 0.0);
    std::vector<double> logits(static_cast<std::size_t>(T));
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            for (int qi = 0; qi < T; ++qi) {
                const double* qrow = q.data() + (static_cast<std::size_t>(b) * T + qi) * C + h * D;
                double mx = kNegInf;
                for (int t = 0; t < T; ++t) {
                    if (t == silent_token) {
                        logits[static_cast<std::size_t>(t)] = kNegInf;
                        continue;
                    }
                    const double* krow = result.keys.key(b, h, t);
                    double dot = 0.0;
                    for (int d = 0; d < D; ++d) dot += qrow[d] * krow[d];
                    double l = dot * scale;
                    if (cfg.size_weighted_attention) l += std::log(batch.size(b, t));
                    logits[static_cast<std::size_t>(t)] = l;
                    mx = std::max(mx, l);
                }
                double den = 0.0;
                for (int t = 0; t < T; ++t) {
                    const double e =
                        (t == silent_token) ? 0.0 : std::exp(logits[static_cast<std::size_t>(t)] - mx);
                    logits[static_cast<std::size_t>(t)] = e;
                    den += e;
                }
                double* out =
                    heads_out.data() + (static_cast<std::size_t>(b) * T + qi) * C + h * D;
                for (int t = 0; t < T; ++t) {
                    const double w = logits[static_cast<std::size_t>(t)] / den;
                    result.attn.at(b, h, qi, t) = w;
                    const double* vrow = v.data() + (static_cast<std::size_t>(b) * T + t) * C + h * D;
                    for (int d = 0; d < D; ++d) out[d] += w * vrow[d];
                }
            }
        }
    }

    result.tokens = batch;
    std::vector<double> projected(static_cast<std::size_t>(C));
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
            matvec(weights.wo, heads_out.data() + (static_cast<std::size_t>(b) * T + t) * C,
                   projected.data(), C, C);
            double* dst = result.tokens.token(b, t);
            for (int c = 0; c < C; ++c) dst[c] += projected[c];
        }
    }
    return result;
}

double all_pairs_similarity_sum(const TokenBatch& batch, int sample) {
    const int p = batch.protected_count;
    const int M = batch.image_tokens();
    const int C = batch.channels;
    std::vector<double> norms(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) {
        const double* feat = batch.token(sample, p + i);
        double n = 0.0;
        for (int c = 0; c < C; ++c) n += feat[c] * feat[c];
        norms[static_cast<std::size_t>(i)] = std::sqrt(n);
    }
    double sum = 0.0;
    for (int i = 0; i < M; ++i) {
        const double* a = batch.token(sample, p + i);
        for (int j = i + 1; j < M; ++j) {
            const double* c = batch.token(sample, p + j);
            double dot = 0.0;
            for (int d = 0; d < C; ++d) dot += a[d] * c[d];
            const double nn = norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)];
            if (nn > 0.0) sum += dot / nn;
        }
    }
    return sum;
}

}  // namespace napmat::ref
