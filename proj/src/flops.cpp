// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/flops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "napmat/errors.hpp"

namespace napmat::flops {
namespace {

void check_spec(const ModelSpec& spec) {
    if (spec.depth < 1 || spec.dim < 1 || spec.heads < 1 || spec.patch < 1 ||
        spec.resolution < 1) {
        throw ShapeError("model spec fields must be positive");
    }
    if (spec.dim % spec.heads != 0) throw ShapeError("dim must be divisible by heads");
    if (spec.resolution % spec.patch != 0) {
        throw ShapeError("resolution must be divisible by patch size");
    }
}

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(v); }

}  // namespace

ModelSpec preset(std::string_view name) {
    if (name == "deit-s" || name == "deit-s-224") {
        return {"deit-s", 12, 384, 6, 4.0, 16, 224};
    }
    if (name == "deit-b" || name == "deit-b-224") {
        return {"deit-b", 12, 768, 12, 4.0, 16, 224};
    }
    if (name == "deit-b-384") {
        return {"deit-b-384", 12, 768, 12, 4.0, 16, 384};
    }
    if (name == "vit-l" || name == "vit-l-224") {
        return {"vit-l", 24, 1024, 16, 4.0, 16, 224};
    }
    throw ConfigError("unknown model preset: " + std::string(name));
}

std::vector<std::string> preset_names() { return {"deit-s", "deit-b", "deit-b-384", "vit-l"}; }

std::uint64_t attention_flops(int tokens, const ModelSpec& spec) {
    check_spec(spec);
    if (tokens < 1) throw std::invalid_argument("token count must be >= 1");
    const std::uint64_t n = u64(tokens), c = u64(spec.dim);
    // QKV and output projections, plus the two N x N attention matmuls.
    return 4 * n * c * c + 2 * n * n * c;
}

std::uint64_t mlp_flops(int tokens, const ModelSpec& spec) {
    check_spec(spec);
    if (tokens < 1) throw std::invalid_argument("token count must be >= 1");
    const std::uint64_t n = u64(tokens), c = u64(spec.dim);
    const std::uint64_t hidden = static_cast<std::uint64_t>(spec.mlp_ratio * spec.dim);
    return 2 * n * c * hidden;
}

std::uint64_t block_flops(int tokens, const ModelSpec& spec) {
    return attention_flops(tokens, spec) + mlp_flops(tokens, spec);
}

std::uint64_t embed_flops(const ModelSpec& spec) {
    check_spec(spec);
    const std::uint64_t patches = u64(spec.grid_side()) * u64(spec.grid_side());
    return patches * u64(spec.dim) * u64(spec.patch) * u64(spec.patch) * u64(spec.input_channels);
}

std::uint64_t head_flops(const ModelSpec& spec) {
    check_spec(spec);
    return u64(spec.dim) * u64(spec.classes);
}

std::uint64_t schedule_flops(const TokenSchedule& schedule, const ModelSpec& spec) {
    check_spec(spec);
    if (static_cast<int>(schedule.counts.size()) != spec.depth) {
        throw std::invalid_argument("schedule length must equal model depth");
    }
    int previous = spec.initial_tokens();
    std::uint64_t total = embed_flops(spec) + head_flops(spec);
    for (int count : schedule.counts) {
        if (count < 2) {
            throw std::invalid_argument("schedule counts must keep the class token plus one");
        }
        if (count > previous) {
            throw std::invalid_argument("schedule counts must be non-increasing");
        }
        total += attention_flops(previous, spec) + mlp_flops(count, spec);
        previous = count;
    }
    return total;
}

TokenSchedule baseline_schedule(const ModelSpec& spec) {
    check_spec(spec);
    return {std::vector<int>(static_cast<std::size_t>(spec.depth), spec.initial_tokens())};
}

TokenSchedule nap_schedule(const ModelSpec& spec, double keep_ratio,
                           const std::vector<int>& layers) {
    check_spec(spec);
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
        throw std::invalid_argument("keep_ratio must lie in (0, 1]");
    }
    TokenSchedule schedule;
    schedule.counts.reserve(static_cast<std::size_t>(spec.depth));
    int image = spec.initial_tokens() - 1;
    int aggregate = 0;
    for (int layer = 0; layer < spec.depth; ++layer) {
        if (std::find(layers.begin(), layers.end(), layer) != layers.end()) {
            const int kept = static_cast<int>(std::ceil(keep_ratio * image));
            if (kept < image || aggregate > 0) aggregate = 1;
            image = kept;
        }
        schedule.counts.push_back(1 + image + aggregate);
    }
    return schedule;
}

TokenSchedule mat_schedule(const ModelSpec& spec, int r) {
    check_spec(spec);
    if (r < 0) throw std::invalid_argument("merge rate must be >= 0");
    TokenSchedule schedule;
    schedule.counts.reserve(static_cast<std::size_t>(spec.depth));
    int tokens = spec.initial_tokens();
    for (int layer = 0; layer < spec.depth; ++layer) {
        tokens -= r;
        if (tokens < 2) throw std::invalid_argument("merge rate exhausts the tokens");
        schedule.counts.push_back(tokens);
    }
    return schedule;
}

TokenSchedule hynap_schedule(const ModelSpec& spec,
                             const std::vector<hynap::HybridStep>& steps) {
    check_spec(spec);
    if (steps.empty()) throw std::invalid_argument("hybrid schedule must not be empty");
    TokenSchedule schedule;
    schedule.counts.reserve(static_cast<std::size_t>(spec.depth));
    int image = spec.initial_tokens() - 1;
    int aggregate = 0;
    for (int layer = 0; layer < spec.depth; ++layer) {
        const hynap::HybridStep step =
            steps.size() == 1 ? steps[0] : steps.at(static_cast<std::size_t>(layer));
        if (step.prune_count < 0 || step.merge_count < 0) {
            throw std::invalid_argument("hybrid counts must be >= 0");
        }
        if (step.prune_count > 0) aggregate = 1;
        image -= step.prune_count + step.merge_count;
        if (image < 1) throw std::invalid_argument("hybrid schedule exhausts the tokens");
        schedule.counts.push_back(1 + image + aggregate);
    }
    return schedule;
}

}  // namespace napmat::flops
