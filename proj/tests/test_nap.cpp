// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "napmat/nap.hpp"
#include "napmat/reference.hpp"
#include "testutil.hpp"

using namespace napmat;
using nap::build_kernel;
using nap::FusedWeighting;

TEST_CASE("kernel weights follow the distance decay and normalize to one") {
    CHECK(build_kernel(0).weights == std::vector<double>{1.0});

    const nap::NeighborKernel k1 = build_kernel(1);
    CHECK(k1.weights == std::vector<double>{0.25, 0.5, 0.25});

    for (int radius = 0; radius <= 16; ++radius) {
        const nap::NeighborKernel k = build_kernel(radius);
        double sum = 0.0;
        for (double w : k.weights) sum += w;
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        for (int d = 1; d <= radius; ++d) {
            CHECK(k.at(d) == k.at(-d));
            CHECK(k.at(d) < k.at(0));
        }
    }
    CHECK_THROWS_AS(build_kernel(-1), std::invalid_argument);
}

TEST_CASE("received attention averages over heads and queries, skipping the class column") {
    SUBCASE("uniform attention") {
        AttentionMap attn;
        attn.batch = 1;
        attn.heads = 3;
        attn.tokens = 5;
        attn.weights.assign(3 * 5 * 5, 1.0 / 5.0);
        const std::vector<double> r = nap::received_attention(attn);
        REQUIRE(r.size() == 4);
        for (double v : r) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("single head, explicit column sums") {
        AttentionMap attn;
        attn.batch = 1;
        attn.heads = 1;
        attn.tokens = 3;
        attn.weights.assign(9, 0.0);
        for (int q = 0; q < 3; ++q) {
            attn.at(0, 0, q, 1) = 0.3;
            attn.at(0, 0, q, 2) = 0.7;
        }
        const std::vector<double> r = nap::received_attention(attn);
        CHECK(r[0] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(r[1] == doctest::Approx(0.7).epsilon(1e-12));
    }
    SUBCASE("matches the loop oracle") {
        const AttentionMap attn = testutil::random_attention(2, 3, 8, 42);
        const std::vector<double> fast = nap::received_attention(attn);
        const std::vector<double> slow = ref::received_attention(attn);
        REQUIRE(fast.size() == slow.size());
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(std::abs(fast[i] - slow[i]) <= 1e-10);
        }
    }
    SUBCASE("degenerate map") {
        AttentionMap attn;
        attn.batch = 1;
        attn.heads = 1;
        attn.tokens = 1;
        attn.weights.assign(1, 1.0);
        CHECK_THROWS_AS(nap::received_attention(attn), std::invalid_argument);
    }
}

TEST_CASE("neighbor awareness convolves with zero boundaries") {
    SUBCASE("impulse spreads by the kernel") {
        const std::vector<double> phi =
            nap::neighbor_awareness({0.0, 1.0, 0.0}, 1, 3, build_kernel(1));
        CHECK(phi[0] == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(phi[1] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(phi[2] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("constant input is preserved in the interior") {
        std::vector<double> r(11, 0.37);
        const std::vector<double> phi = nap::neighbor_awareness(r, 1, 11, build_kernel(3));
        for (int i = 3; i < 8; ++i) CHECK(phi[static_cast<std::size_t>(i)] == doctest::Approx(0.37).epsilon(1e-12));
        CHECK(phi[0] < 0.37);  // boundary loses mass to the zero padding
    }
    SUBCASE("matches the shift-and-sum oracle") {
        Rng rng(7);
        std::vector<double> r(2 * 10);
        for (auto& v : r) v = rng.uniform();
        const std::vector<double> fast = nap::neighbor_awareness(r, 2, 10, build_kernel(3));
        const std::vector<double> slow = ref::neighbor_awareness(r, 2, 10, 3);
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(std::abs(fast[i] - slow[i]) <= 1e-12);
        }
    }
}

TEST_CASE("importance blends class attention with neighbor awareness") {
    const std::vector<double> cls = {0.2, 0.5, 0.1};
    const std::vector<double> phi = {0.6, 0.1, 0.1};

    const nap::ImportanceVector a0 = nap::importance(cls, phi, 1, 3, 0.0);
    CHECK(a0.xi == cls);
    const nap::ImportanceVector a1 = nap::importance(cls, phi, 1, 3, 1.0);
    CHECK(a1.xi == phi);

    const nap::ImportanceVector mix = nap::importance(cls, phi, 1, 3, 0.1);
    CHECK(mix.xi[0] == doctest::Approx(0.24).epsilon(1e-15));

    CHECK_THROWS_AS(nap::importance(cls, phi, 1, 3, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(nap::importance(cls, phi, 1, 3, 1.5), std::invalid_argument);
}

TEST_CASE("importance stays inside the blend interval") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> cls(8), phi(8);
        for (auto& v : cls) v = rng.uniform();
        for (auto& v : phi) v = rng.uniform();
        const double alpha = rng.uniform();
        const nap::ImportanceVector iv = nap::importance(cls, phi, 1, 8, alpha);
        for (int i = 0; i < 8; ++i) {
            const double lo = std::min(cls[static_cast<std::size_t>(i)], phi[static_cast<std::size_t>(i)]);
            const double hi = std::max(cls[static_cast<std::size_t>(i)], phi[static_cast<std::size_t>(i)]);
            // up to one rounding step outside the exact interval
            CHECK(iv.xi[static_cast<std::size_t>(i)] >= lo - 1e-15);
            CHECK(iv.xi[static_cast<std::size_t>(i)] <= hi + 1e-15);
        }
    }
}

TEST_CASE("scoring chain wires the pieces together") {
    const AttentionMap attn = testutil::random_attention(2, 2, 9, 5);
    const nap::ImportanceVector iv = nap::score_tokens(attn, build_kernel(3), 0.1);
    CHECK(iv.batch == 2);
    CHECK(iv.count == 8);
    for (std::size_t i = 0; i < iv.xi.size(); ++i) {
        CHECK(iv.xi[i] == 0.9 * iv.cls_attn[i] + 0.1 * iv.phi[i]);
    }
}

TEST_CASE("prune keeps the most important tokens and fuses the rest") {
    TokenBatch batch = TokenBatch::zeros(1, 5, 1, 1, {1, 4});
    for (int t = 1; t < 5; ++t) {
        batch.token(0, t)[0] = static_cast<double>(t);  // m1..m4 = 1,2,3,4
        batch.prov(0, t) = {static_cast<std::uint32_t>(t - 1)};
    }
    const std::vector<double> xi = {0.4, 0.3, 0.2, 0.1};

    SUBCASE("keep everything") {
        const nap::PruneResult res = nap::prune(batch, xi, 1.0);
        CHECK(res.tokens.features == batch.features);
        CHECK(res.tokens.tokens == 5);
        CHECK(res.plan.samples[0].fused_sources.empty());
    }
    SUBCASE("keep half") {
        const nap::PruneResult res = nap::prune(batch, xi, 0.5);
        CHECK(res.tokens.tokens == 1 + 2 + 1);
        CHECK(res.plan.samples[0].keep == std::vector<int>{1, 2});
        CHECK(res.plan.samples[0].fused_sources == std::vector<int>{3, 4});
        // (0.2 * m3 + 0.1 * m4) / 0.3
        const double expected = (0.2 * 3.0 + 0.1 * 4.0) / 0.3;
        CHECK(res.tokens.token(0, 3)[0] == doctest::Approx(expected).epsilon(1e-15));
        CHECK(res.tokens.size(0, 3) == 2.0);
        CHECK(res.tokens.prov(0, 3) == std::vector<std::uint32_t>{2, 3});
    }
    SUBCASE("ties keep the lowest indices") {
        const std::vector<double> equal = {0.5, 0.5, 0.5, 0.5};
        const nap::PruneResult res = nap::prune(batch, equal, 0.5);
        CHECK(res.plan.samples[0].keep == std::vector<int>{1, 2});
        CHECK(res.tokens.tokens == 1 + 2 + 1);
    }
    SUBCASE("invalid ratios are rejected") {
        CHECK_THROWS_AS(nap::prune(batch, xi, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(nap::prune(batch, xi, 1.5), std::invalid_argument);
    }
}

TEST_CASE("prune conserves token mass exactly") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const TokenBatch batch = testutil::random_batch(2, 12, 6, 1, seed, 4);
        Rng rng(seed + 100);
        std::vector<double> xi(static_cast<std::size_t>(2 * 11));
        for (auto& v : xi) v = rng.uniform();
        const nap::PruneResult res = nap::prune(batch, xi, 0.6);
        for (int b = 0; b < 2; ++b) {
            CHECK(testutil::total_size(res.tokens, b) == testutil::total_size(batch, b));
            // provenance still partitions the grid
            std::vector<std::uint32_t> cells;
            for (int t = 1; t < res.tokens.tokens; ++t) {
                const auto& prov = res.tokens.prov(b, t);
                cells.insert(cells.end(), prov.begin(), prov.end());
            }
            std::sort(cells.begin(), cells.end());
            REQUIRE(static_cast<int>(cells.size()) == batch.grid.cells());
            for (std::size_t i = 0; i < cells.size(); ++i) CHECK(cells[i] == i);
        }
    }
}

TEST_CASE("selection is invariant under positive affine rescaling") {
    const TokenBatch batch = testutil::random_batch(1, 16, 4, 1, 8);
    Rng rng(321);
    std::vector<double> xi(15);
    for (auto& v : xi) v = rng.uniform();
    const nap::PruneResult base = nap::prune(batch, xi, 0.4);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = rng.uniform(0.5, 3.0);
        const double b = rng.uniform(0.0, 1.0);
        std::vector<double> scaled(xi.size());
        for (std::size_t i = 0; i < xi.size(); ++i) scaled[i] = a * xi[i] + b;
        const nap::PruneResult res = nap::prune(batch, scaled, 0.4);
        CHECK(res.plan.samples[0].keep == base.plan.samples[0].keep);
        CHECK(res.plan.samples[0].fused_sources == base.plan.samples[0].fused_sources);
    }
}

TEST_CASE("larger keep ratios keep supersets") {
    const TokenBatch batch = testutil::random_batch(1, 20, 4, 1, 9);
    Rng rng(17);
    std::vector<double> xi(19);
    for (auto& v : xi) v = rng.uniform();
    std::vector<int> previous;
    for (double ratio : {0.2, 0.4, 0.6, 0.8, 1.0}) {
        const nap::PruneResult res = nap::prune(batch, xi, ratio);
        const std::vector<int>& keep = res.plan.samples[0].keep;
        CHECK(std::includes(keep.begin(), keep.end(), previous.begin(), previous.end()));
        previous = keep;
    }
}

TEST_CASE("raising a neighbor's received attention never lowers a token's importance") {
    const int count = 12;
    Rng rng(55);
    std::vector<double> r(count);
    for (auto& v : r) v = rng.uniform();
    const nap::NeighborKernel kernel = build_kernel(3);
    const std::vector<double> cls(count, 0.1);

    const std::vector<double> phi = nap::neighbor_awareness(r, 1, count, kernel);
    const nap::ImportanceVector before = nap::importance(cls, phi, 1, count, 0.3);

    const int target = 5;
    for (int nb = target - 3; nb <= target + 3; ++nb) {
        std::vector<double> bumped = r;
        bumped[static_cast<std::size_t>(nb)] += 0.5;
        const std::vector<double> phi2 = nap::neighbor_awareness(bumped, 1, count, kernel);
        const nap::ImportanceVector after = nap::importance(cls, phi2, 1, count, 0.3);
        CHECK(after.xi[target] >= before.xi[target]);
    }
}

TEST_CASE("prune_to_count absorbs a designated aggregate token") {
    const TokenBatch batch = testutil::random_batch(1, 8, 4, 1, 44);
    Rng rng(11);
    std::vector<double> xi(7);
    for (auto& v : xi) v = rng.uniform();

    const nap::PruneResult res = nap::prune_to_count(batch, xi, 4, FusedWeighting::Xi, 7);
    CHECK(res.tokens.tokens == 1 + 4 + 1);
    const auto& sources = res.plan.samples[0].fused_sources;
    CHECK(std::find(sources.begin(), sources.end(), 7) != sources.end());
    CHECK(std::find(res.plan.samples[0].keep.begin(), res.plan.samples[0].keep.end(), 7) ==
          res.plan.samples[0].keep.end());

    // absorbing with nothing else discarded re-emits the aggregate bitwise
    const nap::PruneResult lone = nap::prune_to_count(batch, xi, 6, FusedWeighting::Xi, 7);
    CHECK(lone.tokens.tokens == 8);
    CHECK(std::equal(lone.tokens.token(0, 7), lone.tokens.token(0, 7) + 4, batch.token(0, 7)));
}

TEST_CASE("uniform fused weighting averages plainly") {
    TokenBatch batch = TokenBatch::zeros(1, 4, 1, 1, {1, 3});
    for (int t = 1; t < 4; ++t) {
        batch.token(0, t)[0] = static_cast<double>(t);
        batch.prov(0, t) = {static_cast<std::uint32_t>(t - 1)};
    }
    const std::vector<double> xi = {0.9, 0.2, 0.1};
    const nap::PruneResult res = nap::prune(batch, xi, 1.0 / 3.0, FusedWeighting::Uniform);
    CHECK(res.tokens.tokens == 3);  // class + 1 kept + fused
    CHECK(res.tokens.token(0, 2)[0] == doctest::Approx((2.0 + 3.0) / 2.0).epsilon(1e-15));
}
