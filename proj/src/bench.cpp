// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/bench.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "napmat/mat.hpp"
#include "napmat/nap.hpp"
#include "napmat/reference.hpp"
#include "napmat/rng.hpp"
#include "napmat/toy_vit.hpp"

namespace napmat::bench {
namespace {

using nlohmann::ordered_json;

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Timing {
    double min_ms = 0.0;
    double mean_ms = 0.0;
    int reps = 0;
};

// Warm up once, then repeat until the budget is used; report min and mean.
Timing time_kernel(const std::function<void()>& fn, double target_ms) {
    fn();
    Timing t;
    double total = 0.0;
    double best = 0.0;
    int reps = 0;
    while (total < target_ms || reps < 3) {
        const double t0 = now_ms();
        fn();
        const double dt = now_ms() - t0;
        total += dt;
        best = (reps == 0) ? dt : std::min(best, dt);
        ++reps;
        if (reps >= 1000) break;
    }
    t.min_ms = best;
    t.mean_ms = total / reps;
    t.reps = reps;
    return t;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= n;
    my /= n;
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = std::log(x[i]) - mx;
        cov += dx * (std::log(y[i]) - my);
        var += dx * dx;
    }
    return cov / var;
}

}  // namespace

BenchReport run_bench(const BenchOptions& options) {
    BenchReport report;
    ordered_json& j = report.json;
    j["channels"] = options.channels;
    j["sizes"] = options.sizes;
    j["note"] = "times are min over repetitions; slopes fitted on the serial reference kernels";

    const mat::SimilarityConfig sim{mat::Metric::Cosine, mat::Feature::X};

    ordered_json adjacent = ordered_json::array();
    ordered_json adjacent_ref = ordered_json::array();
    ordered_json all_pairs = ordered_json::array();
    std::vector<double> sizes_d, adj_ms, pairs_ms;

    volatile double sink = 0.0;  // defeats dead-code elimination
    for (int tokens : options.sizes) {
        const GridShape grid{1, tokens - 1};
        const TokenBatch batch = synthetic_tokens(1, grid, options.channels, options.seed);
        const std::uint64_t pair_ops = static_cast<std::uint64_t>(batch.image_tokens()) - 1;
        const std::uint64_t all_ops =
            static_cast<std::uint64_t>(batch.image_tokens()) * (batch.image_tokens() - 1) / 2;

        const Timing t_impl = time_kernel(
            [&] {
                const auto scores = mat::adjacent_similarity(batch, nullptr, sim);
                sink = sink + scores[0];
            },
            options.target_ms);
        adjacent.push_back({{"tokens", tokens},
                            {"pairs", pair_ops},
                            {"min_ms", t_impl.min_ms},
                            {"mean_ms", t_impl.mean_ms},
                            {"ns_per_pair", t_impl.min_ms * 1e6 / pair_ops},
                            {"reps", t_impl.reps}});

        const Timing t_ref = time_kernel(
            [&] {
                const auto scores = ref::adjacent_similarity(batch, nullptr, sim);
                sink = sink + scores[0];
            },
            options.target_ms);
        adjacent_ref.push_back({{"tokens", tokens},
                                {"pairs", pair_ops},
                                {"min_ms", t_ref.min_ms},
                                {"mean_ms", t_ref.mean_ms},
                                {"ns_per_pair", t_ref.min_ms * 1e6 / pair_ops},
                                {"reps", t_ref.reps}});

        // The quadratic baseline gets a smaller budget at large sizes;
        // one clean repetition is enough for the fit.
        const double pair_budget = tokens >= 4096 ? 1.0 : options.target_ms;
        const Timing t_all = time_kernel(
            [&] { sink = sink + ref::all_pairs_similarity_sum(batch, 0); }, pair_budget);
        all_pairs.push_back({{"tokens", tokens},
                             {"pairs", all_ops},
                             {"min_ms", t_all.min_ms},
                             {"mean_ms", t_all.mean_ms},
                             {"ns_per_pair", t_all.min_ms * 1e6 / all_ops},
                             {"reps", t_all.reps}});

        sizes_d.push_back(tokens);
        adj_ms.push_back(t_ref.min_ms);
        pairs_ms.push_back(t_all.min_ms);
    }
    j["adjacent_similarity"] = adjacent;
    j["adjacent_similarity_serial"] = adjacent_ref;
    j["all_pairs_similarity_serial"] = all_pairs;

    report.adjacent_slope = loglog_slope(sizes_d, adj_ms);
    report.all_pairs_slope = loglog_slope(sizes_d, pairs_ms);
    j["fits"] = {{"adjacent_similarity_serial_slope", report.adjacent_slope},
                 {"all_pairs_similarity_serial_slope", report.all_pairs_slope},
                 {"adjacent_scales_linearly",
                  report.adjacent_slope >= 0.8 && report.adjacent_slope <= 1.3},
                 {"all_pairs_scales_quadratically",
                  report.all_pairs_slope >= 1.7 && report.all_pairs_slope <= 2.3}};

    // Reduction kernels at a fixed mid size.
    {
        const int tokens = 1024;
        const GridShape grid{1, tokens - 1};
        const TokenBatch batch = synthetic_tokens(1, grid, options.channels, options.seed);
        Rng rng(derive_seed(options.seed, 0xbe));
        std::vector<double> xi(static_cast<std::size_t>(batch.image_tokens()));
        for (auto& v : xi) v = rng.uniform();

        const Timing t_prune = time_kernel(
            [&] {
                auto res = nap::prune(batch, xi, 0.7);
                sink = sink + res.tokens.size(0, 0);
            },
            options.target_ms);
        const Timing t_reduce = time_kernel(
            [&] {
                auto res = mat::mat_reduce(batch, nullptr, sim, tokens / 8);
                sink = sink + res.tokens.size(0, 0);
            },
            options.target_ms);
        j["reduction_kernels"] = {
            {"tokens", tokens},
            {"prune_keep_0.7_ms", t_prune.min_ms},
            {"mat_reduce_r_128_ms", t_reduce.min_ms},
        };
    }

    // Parallel forward vs. the serial reference, the shape the OpenMP
    // pragmas are meant to pay for.
    if (options.include_attention) {
        ordered_json attn = ordered_json::array();
        for (int tokens : {64, 128, 256}) {
            BlockConfig cfg;
            cfg.dim = options.channels;
            cfg.heads = options.heads;
            cfg.seed = options.seed;
            const GridShape grid{1, tokens - 1};
            const TokenBatch batch = synthetic_tokens(1, grid, options.channels, options.seed);
            const Timing t_par = time_kernel(
                [&] {
                    auto res = attention_forward(batch, cfg, 0);
                    sink = sink + res.tokens.size(0, 0);
                },
                options.target_ms / 2);
            const Timing t_ser = time_kernel(
                [&] {
                    auto res = ref::attention_forward(batch, cfg, 0);
                    sink = sink + res.tokens.size(0, 0);
                },
                options.target_ms / 2);
            attn.push_back({{"tokens", tokens},
                            {"parallel_min_ms", t_par.min_ms},
                            {"serial_min_ms", t_ser.min_ms},
                            {"speedup", t_ser.min_ms / t_par.min_ms}});
        }
        j["attention_forward"] = attn;
    }
    return report;
}

}  // namespace napmat::bench
