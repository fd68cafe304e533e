// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "napmat/hynap.hpp"
#include "napmat/reference.hpp"
#include "testutil.hpp"

using namespace napmat;
using hynap::HybridStep;

TEST_CASE("bsm with r=0 is the identity") {
    const TokenBatch batch = testutil::random_batch(1, 9, 6, 1, 3);
    const KeyTensor keys = testutil::random_keys(1, 2, 9, 4, 4);
    const hynap::BsmResult res = hynap::bsm_merge(batch, keys, 0);
    CHECK(res.tokens.features == batch.features);
    CHECK(res.tokens.tokens == batch.tokens);
}

TEST_CASE("a duplicated token pair merges first") {
    TokenBatch batch = testutil::random_batch(1, 5, 3, 1, 21);
    KeyTensor keys = testutil::random_keys(1, 2, 5, 4, 22);
    // token 1 and token 2 get identical keys -> similarity 1, the maximum
    for (int h = 0; h < 2; ++h) {
        std::memcpy(keys.key(0, h, 2), keys.key(0, h, 1), sizeof(double) * 4);
    }
    const hynap::BsmResult res = hynap::bsm_merge(batch, keys, 1);
    CHECK(res.tokens.tokens == 4);
    REQUIRE(res.plans[0].merged.size() == 1);
    CHECK(res.plans[0].merged[0].source == 1);
    CHECK(res.plans[0].merged[0].dest == 2);
    CHECK(res.plans[0].merged[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    // size-weighted mean of tokens 1 and 2 lands where token 2 was
    for (int c = 0; c < 3; ++c) {
        const double expected = 0.5 * (batch.token(0, 1)[c] + batch.token(0, 2)[c]);
        CHECK(res.tokens.token(0, 1)[c] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("bsm matches the exhaustive oracle") {
    Rng rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        const int mergeable = static_cast<int>(rng.uniform_int(5, 10));
        const int r = static_cast<int>(rng.uniform_int(0, (mergeable - 1) / 2));
        const TokenBatch batch =
            testutil::random_batch(1, 1 + mergeable, 4, 1, rng.next_u64(), 3);
        const KeyTensor keys =
            testutil::random_keys(1, 3, 1 + mergeable, 5, rng.next_u64());
        const hynap::BsmResult fast = hynap::bsm_merge(batch, keys, r);
        const TokenBatch slow = ref::bsm_merge(batch, keys, r);
        REQUIRE(fast.tokens.tokens == batch.tokens - r);
        CHECK(fast.tokens.features == slow.features);
        CHECK(fast.tokens.sizes == slow.sizes);
        CHECK(fast.tokens.provenance == slow.provenance);
    }
}

TEST_CASE("bsm rejects oversized merge counts") {
    const TokenBatch batch = testutil::random_batch(1, 7, 4, 1, 9);
    const KeyTensor keys = testutil::random_keys(1, 2, 7, 4, 10);
    CHECK_THROWS_AS(hynap::bsm_merge(batch, keys, 3), std::invalid_argument);
    CHECK_NOTHROW(hynap::bsm_merge(batch, keys, 2));
}

TEST_CASE("bsm conserves mass") {
    const TokenBatch batch = testutil::random_batch(2, 13, 5, 1, 77, 4);
    const KeyTensor keys = testutil::random_keys(2, 2, 13, 4, 78);
    const hynap::BsmResult res = hynap::bsm_merge(batch, keys, 4);
    for (int b = 0; b < 2; ++b) {
        CHECK(testutil::total_size(res.tokens, b) == testutil::total_size(batch, b));
        const std::vector<double> before = testutil::weighted_feature_sum(batch, b);
        const std::vector<double> after = testutil::weighted_feature_sum(res.tokens, b);
        for (int c = 0; c < 5; ++c) {
            CHECK(std::abs(after[static_cast<std::size_t>(c)] - before[static_cast<std::size_t>(c)]) <=
                  1e-6 * (1.0 + std::abs(before[static_cast<std::size_t>(c)])));
        }
    }
}

TEST_CASE("hybrid layer degenerate cases") {
    const TokenBatch batch = testutil::random_batch(2, 12, 8, 1, 31);
    const BlockConfig cfg{8, 2, 4.0, 1, 9};
    const AttentionResult attn = attention_forward(batch, cfg, 0);
    const hynap::NapOptions options;

    SUBCASE("(0, 0) is the identity") {
        const hynap::HynapResult res =
            hynap::hynap_layer(batch, attn.attn, attn.keys, {0, 0}, options);
        CHECK(res.tokens.features == batch.features);
        CHECK(res.tokens.tokens == batch.tokens);
    }
    SUBCASE("(p, 0) reduces to pruning") {
        const hynap::HynapResult res =
            hynap::hynap_layer(batch, attn.attn, attn.keys, {3, 0}, options);
        const nap::NeighborKernel kernel = nap::build_kernel(options.radius);
        const nap::ImportanceVector iv = nap::score_tokens(attn.attn, kernel, options.alpha);
        const nap::PruneResult pruned =
            nap::prune_to_count(batch, iv.xi, 8, options.weighting);
        CHECK(res.tokens.features == pruned.tokens.features);
        CHECK(res.tokens.sizes == pruned.tokens.sizes);
        CHECK(res.tokens.tokens == 1 + 8 + 1);
    }
    SUBCASE("(0, r) reduces to bsm with importance ranking") {
        const hynap::HynapResult res =
            hynap::hynap_layer(batch, attn.attn, attn.keys, {0, 4}, options);
        const nap::NeighborKernel kernel = nap::build_kernel(options.radius);
        const nap::ImportanceVector iv = nap::score_tokens(attn.attn, kernel, options.alpha);
        std::vector<std::vector<int>> ranking(2);
        for (int b = 0; b < 2; ++b) {
            std::vector<int> order(11);
            for (int i = 0; i < 11; ++i) order[static_cast<std::size_t>(i)] = 1 + i;
            std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
                return iv.score(b, lhs - 1) > iv.score(b, rhs - 1);
            });
            ranking[static_cast<std::size_t>(b)] = order;
        }
        const hynap::BsmResult direct = hynap::bsm_merge(batch, attn.keys, 4, ranking);
        CHECK(res.tokens.features == direct.tokens.features);
        CHECK(res.tokens.sizes == direct.tokens.sizes);
    }
}

TEST_CASE("hybrid layer count contract") {
    Rng rng(888);
    for (int trial = 0; trial < 50; ++trial) {
        const int mergeable = static_cast<int>(rng.uniform_int(8, 30));
        const TokenBatch batch =
            testutil::random_batch(1, 1 + mergeable, 8, 1, rng.next_u64(), 2);
        const BlockConfig cfg{8, 2, 4.0, 1, rng.next_u64()};
        const AttentionResult attn = attention_forward(batch, cfg, 0);
        const int prune = static_cast<int>(rng.uniform_int(0, mergeable / 3));
        const int kept = mergeable - prune;
        const int merge = static_cast<int>(rng.uniform_int(0, std::max(0, (kept - 1) / 2)));
        const hynap::HynapResult res =
            hynap::hynap_layer(batch, attn.attn, attn.keys, {prune, merge}, {});
        const int expected = batch.tokens - prune - merge + (prune > 0 ? 1 : 0);
        CHECK(res.tokens.tokens == expected);
        CHECK(testutil::total_size(res.tokens, 0) == testutil::total_size(batch, 0));
    }
}

TEST_CASE("hybrid layer re-absorbs a previous aggregate") {
    const TokenBatch batch = testutil::random_batch(1, 14, 8, 1, 11, 2);
    const BlockConfig cfg{8, 2, 4.0, 1, 3};
    const AttentionResult attn = attention_forward(batch, cfg, 0);
    const int aggregate = batch.tokens - 1;
    const hynap::HynapResult res =
        hynap::hynap_layer(batch, attn.attn, attn.keys, {2, 3}, {}, aggregate);
    // 12 candidates: prune 2, merge 3, plus the refreshed aggregate
    CHECK(res.tokens.tokens == 1 + (12 - 2 - 3) + 1);
    const auto& sources = res.plan.prune.samples[0].fused_sources;
    CHECK(std::find(sources.begin(), sources.end(), aggregate) != sources.end());
    CHECK(testutil::total_size(res.tokens, 0) == testutil::total_size(batch, 0));
}

TEST_CASE("hybrid layer validates protected count and budgets") {
    const TokenBatch two_protected = testutil::random_batch(1, 10, 8, 2, 5);
    const BlockConfig cfg{8, 2, 4.0, 1, 5};
    const AttentionResult attn = attention_forward(two_protected, cfg, 0);
    CHECK_THROWS_AS(
        hynap::hynap_layer(two_protected, attn.attn, attn.keys, {1, 1}, {}),
        std::invalid_argument);

    const TokenBatch batch = testutil::random_batch(1, 10, 8, 1, 6);
    const AttentionResult attn2 = attention_forward(batch, cfg, 0);
    CHECK_THROWS_AS(hynap::hynap_layer(batch, attn2.attn, attn2.keys, {6, 4}, {}),
                    std::invalid_argument);
}
