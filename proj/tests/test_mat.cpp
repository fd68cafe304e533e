// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "napmat/errors.hpp"
#include "napmat/mat.hpp"
#include "napmat/reference.hpp"
#include "testutil.hpp"

using namespace napmat;
using mat::Feature;
using mat::Metric;
using mat::SimilarityConfig;

namespace {

TokenBatch scalar_batch(const std::vector<double>& values, const std::vector<double>& sizes,
                        int protected_count = 1) {
    const int tokens = protected_count + static_cast<int>(values.size());
    TokenBatch batch =
        TokenBatch::zeros(1, tokens, 1, protected_count, {1, static_cast<int>(values.size())});
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int t = protected_count + static_cast<int>(i);
        batch.token(0, t)[0] = values[i];
        batch.size(0, t) = sizes.empty() ? 1.0 : sizes[i];
        batch.prov(0, t) = {static_cast<std::uint32_t>(i)};
    }
    return batch;
}

}  // namespace

TEST_CASE("adjacent similarity under cosine") {
    SUBCASE("identical neighbors score 1") {
        TokenBatch batch = TokenBatch::zeros(1, 3, 4, 1, {1, 2});
        for (int t = 1; t < 3; ++t) {
            for (int c = 0; c < 4; ++c) batch.token(0, t)[c] = 1.0 + c;
            batch.prov(0, t) = {static_cast<std::uint32_t>(t - 1)};
        }
        const std::vector<double> a =
            mat::adjacent_similarity(batch, nullptr, {Metric::Cosine, Feature::X});
        REQUIRE(a.size() == 1);
        CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal neighbors score 0") {
        TokenBatch batch = TokenBatch::zeros(1, 3, 4, 1, {1, 2});
        batch.token(0, 1)[0] = 2.0;
        batch.token(0, 2)[1] = 3.0;
        batch.prov(0, 1) = {0};
        batch.prov(0, 2) = {1};
        const std::vector<double> a =
            mat::adjacent_similarity(batch, nullptr, {Metric::Cosine, Feature::X});
        CHECK(a[0] == 0.0);
    }
    SUBCASE("zero-norm tokens sink to -inf") {
        TokenBatch batch = TokenBatch::zeros(1, 4, 4, 1, {1, 3});
        batch.token(0, 1)[0] = 1.0;  // token 2 stays zero
        batch.token(0, 3)[2] = 1.0;
        for (int t = 1; t < 4; ++t) batch.prov(0, t) = {static_cast<std::uint32_t>(t - 1)};
        const std::vector<double> a =
            mat::adjacent_similarity(batch, nullptr, {Metric::Cosine, Feature::X});
        CHECK(std::isinf(a[0]));
        CHECK(a[0] < 0);
        CHECK(std::isinf(a[1]));
    }
    SUBCASE("matches the per-pair oracle on every feature") {
        const TokenBatch batch = testutil::random_batch(2, 8, 12, 1, 5);
        const KeyTensor keys = testutil::random_keys(2, 3, 8, 4, 6);
        for (Feature feature : {Feature::X, Feature::KMean, Feature::KL2Norm}) {
            const SimilarityConfig cfg{Metric::Cosine, feature};
            const std::vector<double> fast = mat::adjacent_similarity(batch, &keys, cfg);
            const std::vector<double> slow = ref::adjacent_similarity(batch, &keys, cfg);
            REQUIRE(fast.size() == slow.size());
            for (std::size_t i = 0; i < fast.size(); ++i) {
                CHECK(std::abs(fast[i] - slow[i]) <= 1e-10);
            }
        }
    }
}

TEST_CASE("adjacent similarity under symmetric KL") {
    const TokenBatch batch = testutil::random_batch(1, 9, 6, 1, 15);
    const SimilarityConfig cfg{Metric::SymmetricKL, Feature::X};
    const std::vector<double> scores = mat::adjacent_similarity(batch, nullptr, cfg);
    for (double s : scores) CHECK(s <= 0.0);  // negated divergence

    // identical tokens are maximally similar (zero divergence)
    TokenBatch twin = batch;
    std::copy(twin.token(0, 2), twin.token(0, 2) + 6, twin.token(0, 3));
    const std::vector<double> twin_scores = mat::adjacent_similarity(twin, nullptr, cfg);
    CHECK(twin_scores[1] == doctest::Approx(0.0).epsilon(1e-12));

    const std::vector<double> slow = ref::adjacent_similarity(batch, nullptr, cfg);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(std::abs(scores[i] - slow[i]) <= 1e-10);
    }
}

TEST_CASE("similarity configuration errors") {
    const TokenBatch batch = testutil::random_batch(1, 6, 4, 1, 3);
    CHECK_THROWS_AS(mat::adjacent_similarity(batch, nullptr, {Metric::Cosine, Feature::KMean}),
                    ConfigError);
    const TokenBatch tiny = testutil::random_batch(1, 2, 4, 1, 3);
    CHECK_THROWS_AS(mat::adjacent_similarity(tiny, nullptr, {Metric::Cosine, Feature::X}),
                    std::invalid_argument);
}

TEST_CASE("top-r pair selection") {
    const std::vector<double> a = {0.9, 0.1, 0.8, 0.2, 0.95};
    CHECK(mat::select_pairs(a, 0).empty());
    CHECK(mat::select_pairs(a, 3) == std::vector<int>{0, 2, 4});
    CHECK(mat::select_pairs(a, 5) == std::vector<int>{0, 1, 2, 3, 4});

    const std::vector<double> equal(4, 0.5);
    CHECK(mat::select_pairs(equal, 2) == std::vector<int>{0, 1});

    CHECK_THROWS_AS(mat::select_pairs(a, 6), std::invalid_argument);
    CHECK_THROWS_AS(mat::select_pairs(a, -1), std::invalid_argument);
}

TEST_CASE("destination resolution forward-fills runs") {
    SUBCASE("the worked chain example") {
        const std::vector<int> selected = {1, 2, 5};
        const mat::Destinations d = mat::resolve_destinations(selected);
        CHECK(d.dest == std::vector<int>{1, 2, 5});
        CHECK(d.filled == std::vector<int>{1, 1, 5});
        CHECK(d.source == std::vector<int>{2, 3, 6});
    }
    SUBCASE("single pair") {
        const std::vector<int> selected = {4};
        const mat::Destinations d = mat::resolve_destinations(selected);
        CHECK(d.filled == std::vector<int>{4});
        CHECK(d.source == std::vector<int>{5});
    }
    SUBCASE("one maximal run") {
        const std::vector<int> selected = {1, 2, 3, 4};
        const mat::Destinations d = mat::resolve_destinations(selected);
        CHECK(d.filled == std::vector<int>{1, 1, 1, 1});
        CHECK(d.source == std::vector<int>{2, 3, 4, 5});
    }
    SUBCASE("inputs must be sorted and distinct") {
        CHECK_THROWS_AS(mat::resolve_destinations(std::vector<int>{3, 1}),
                        std::invalid_argument);
        CHECK_THROWS_AS(mat::resolve_destinations(std::vector<int>{2, 2}),
                        std::invalid_argument);
    }
}

TEST_CASE("destinations and sources never collide") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 12));
        std::set<int> pick;
        const int r = static_cast<int>(rng.uniform_int(1, n));
        while (static_cast<int>(pick.size()) < r) {
            pick.insert(static_cast<int>(rng.uniform_int(0, n - 1)));
        }
        const std::vector<int> selected(pick.begin(), pick.end());
        const mat::Destinations d = mat::resolve_destinations(selected);
        std::set<int> filled(d.filled.begin(), d.filled.end());
        for (int s : d.source) CHECK(filled.count(s) == 0);
        for (std::size_t k = 1; k < d.filled.size(); ++k) {
            CHECK(d.filled[k] >= d.filled[k - 1]);
            CHECK(d.filled[k] <= d.dest[k]);
        }
    }
}

TEST_CASE("merge folds sources into filled destinations") {
    SUBCASE("empty plan is the identity") {
        const TokenBatch batch = testutil::random_batch(1, 6, 4, 1, 9);
        const mat::MatResult res =
            mat::mat_reduce(batch, nullptr, {Metric::Cosine, Feature::X}, 0);
        CHECK(res.tokens.features == batch.features);
    }
    SUBCASE("two identical tokens") {
        TokenBatch batch = scalar_batch({5.0, 5.0}, {1.0, 1.0});
        std::vector<mat::MergePlan> plans(1);
        plans[0].r = 1;
        plans[0].selected = {0};
        plans[0].dests = mat::resolve_destinations(plans[0].selected);
        const TokenBatch out = mat::merge(batch, plans);
        CHECK(out.tokens == 2);
        CHECK(out.token(0, 1)[0] == 5.0);
        CHECK(out.size(0, 1) == 2.0);
    }
    SUBCASE("weighted mean of two scalars") {
        TokenBatch batch = scalar_batch({2.0, 4.0}, {1.0, 1.0});
        std::vector<mat::MergePlan> plans(1);
        plans[0].r = 1;
        plans[0].selected = {0};
        plans[0].dests = mat::resolve_destinations(plans[0].selected);
        const TokenBatch out = mat::merge(batch, plans);
        CHECK(out.token(0, 1)[0] == doctest::Approx(3.0).epsilon(1e-15));
        CHECK(out.size(0, 1) == 2.0);
        CHECK(out.prov(0, 1) == std::vector<std::uint32_t>{0, 1});
    }
    SUBCASE("a chained run collapses to one token") {
        TokenBatch batch = scalar_batch({0.0, 3.0, 6.0}, {1.0, 1.0, 1.0});
        std::vector<mat::MergePlan> plans(1);
        plans[0].r = 2;
        plans[0].selected = {0, 1};
        plans[0].dests = mat::resolve_destinations(plans[0].selected);
        const TokenBatch out = mat::merge(batch, plans);
        CHECK(out.tokens == 2);
        CHECK(out.token(0, 1)[0] == doctest::Approx(3.0).epsilon(1e-15));
        CHECK(out.size(0, 1) == 3.0);
        CHECK(out.prov(0, 1) == std::vector<std::uint32_t>{0, 1, 2});
    }
}

TEST_CASE("mat_reduce matches the brute-force rule applier exactly") {
    Rng rng(1001);
    int draws = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int mergeable = static_cast<int>(rng.uniform_int(2, 8));
        const int channels = static_cast<int>(rng.uniform_int(1, 6));
        const TokenBatch batch =
            testutil::random_batch(1, 1 + mergeable, channels, 1, rng.next_u64(), 3);
        const KeyTensor keys =
            testutil::random_keys(1, 2, 1 + mergeable, 4, rng.next_u64());
        const Metric metric = (trial % 2 == 0) ? Metric::Cosine : Metric::SymmetricKL;
        const Feature feature =
            (trial % 3 == 0) ? Feature::X : ((trial % 3 == 1) ? Feature::KMean : Feature::KL2Norm);
        const SimilarityConfig cfg{metric, feature};
        for (int r = 0; r <= mergeable - 1; ++r) {
            const mat::MatResult fast = mat::mat_reduce(batch, &keys, cfg, r);
            const TokenBatch slow = ref::mat_reduce(batch, &keys, cfg, r);
            REQUIRE(fast.tokens.tokens == 1 + mergeable - r);
            REQUIRE(fast.tokens.features == slow.features);
            REQUIRE(fast.tokens.sizes == slow.sizes);
            REQUIRE(fast.tokens.provenance == slow.provenance);
            ++draws;
        }
    }
    CHECK(draws > 500);
}

TEST_CASE("mat_reduce conserves mass and order") {
    Rng rng(4242);
    for (int trial = 0; trial < 50; ++trial) {
        const int mergeable = static_cast<int>(rng.uniform_int(4, 20));
        const TokenBatch batch =
            testutil::random_batch(2, 1 + mergeable, 5, 1, rng.next_u64(), 4);
        const int r = static_cast<int>(rng.uniform_int(0, mergeable - 1));
        const mat::MatResult res =
            mat::mat_reduce(batch, nullptr, {Metric::Cosine, Feature::X}, r);
        CHECK(res.tokens.tokens == batch.tokens - r);
        for (int b = 0; b < 2; ++b) {
            CHECK(testutil::total_size(res.tokens, b) == testutil::total_size(batch, b));
            const std::vector<double> before = testutil::weighted_feature_sum(batch, b);
            const std::vector<double> after = testutil::weighted_feature_sum(res.tokens, b);
            for (int c = 0; c < 5; ++c) {
                CHECK(std::abs(after[static_cast<std::size_t>(c)] - before[static_cast<std::size_t>(c)]) <=
                      1e-6 * (1.0 + std::abs(before[static_cast<std::size_t>(c)])));
            }
            // surviving tokens keep their relative order: provenance fronts ascend
            for (int t = 2; t < res.tokens.tokens; ++t) {
                CHECK(res.tokens.prov(b, t).front() > res.tokens.prov(b, t - 1).front());
            }
        }
    }
}

TEST_CASE("protected tokens pass through merges untouched") {
    TokenBatch batch = testutil::random_batch(1, 10, 4, 2, 33);
    const mat::MatResult res = mat::mat_reduce(batch, nullptr, {Metric::Cosine, Feature::X}, 3);
    CHECK(res.tokens.tokens == 7);
    for (int t = 0; t < 2; ++t) {
        CHECK(std::equal(batch.token(0, t), batch.token(0, t) + 4, res.tokens.token(0, t)));
        CHECK(res.tokens.size(0, t) == batch.size(0, t));
    }
}

TEST_CASE("a constant batch merges into constant survivors") {
    TokenBatch batch = TokenBatch::zeros(1, 7, 3, 1, {1, 6});
    for (int t = 1; t < 7; ++t) {
        for (int c = 0; c < 3; ++c) batch.token(0, t)[c] = 2.5;
        batch.prov(0, t) = {static_cast<std::uint32_t>(t - 1)};
    }
    const mat::MatResult res = mat::mat_reduce(batch, nullptr, {Metric::Cosine, Feature::X}, 3);
    CHECK(res.tokens.tokens == 4);
    for (int t = 1; t < 4; ++t) {
        for (int c = 0; c < 3; ++c) CHECK(res.tokens.token(0, t)[c] == doctest::Approx(2.5).epsilon(1e-15));
    }
}

TEST_CASE("inconsistent merge plans are internal errors") {
    const TokenBatch batch = testutil::random_batch(2, 8, 4, 1, 3);
    std::vector<mat::MergePlan> short_plans(1);
    CHECK_THROWS_AS(mat::merge(batch, short_plans), std::logic_error);

    std::vector<mat::MergePlan> uneven(2);
    uneven[0].r = 1;
    uneven[0].selected = {0};
    uneven[0].dests = mat::resolve_destinations(uneven[0].selected);
    uneven[1].r = 2;
    uneven[1].selected = {0, 3};
    uneven[1].dests = mat::resolve_destinations(uneven[1].selected);
    CHECK_THROWS_AS(mat::merge(batch, uneven), std::logic_error);

    std::vector<mat::MergePlan> out_of_range(2);
    for (auto& plan : out_of_range) {
        plan.r = 1;
        plan.selected = {6};  // source 7 exceeds the 7 mergeable tokens
        plan.dests = mat::resolve_destinations(plan.selected);
    }
    CHECK_THROWS_AS(mat::merge(batch, out_of_range), std::logic_error);
}

TEST_CASE("metric and feature names round-trip") {
    CHECK(mat::parse_metric(mat::to_string(Metric::Cosine)) == Metric::Cosine);
    CHECK(mat::parse_metric(mat::to_string(Metric::SymmetricKL)) == Metric::SymmetricKL);
    for (Feature f : {Feature::KMean, Feature::X, Feature::KL2Norm}) {
        CHECK(mat::parse_feature(mat::to_string(f)) == f);
    }
    CHECK_THROWS_AS(mat::parse_metric("euclid"), ConfigError);
    CHECK_THROWS_AS(mat::parse_feature("q"), ConfigError);
}
