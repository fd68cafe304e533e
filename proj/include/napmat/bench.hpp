// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace napmat::bench {

struct BenchOptions {
    std::vector<int> sizes = {256, 512, 1024, 2048, 4096, 8192};  // token counts
    int channels = 64;
    int heads = 4;
    double target_ms = 80.0;  // measurement budget per (kernel, size)
    std::uint64_t seed = 42;
    bool include_attention = true;  // serial vs parallel forward comparison
};

struct BenchReport {
    nlohmann::ordered_json json;
    // Least-squares log-log slopes of time vs. token count, fitted on the
    // serial reference kernels so threading constants cannot skew them.
    double adjacent_slope = 0.0;
    double all_pairs_slope = 0.0;
};

BenchReport run_bench(const BenchOptions& options);

}  // namespace napmat::bench
