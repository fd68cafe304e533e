// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "napmat/hynap.hpp"

namespace napmat::flops {

// Counting convention: one multiply-accumulate = one FLOP. Element-wise
// work (layer norm, softmax, GELU, position adds) is below the percent
// level and excluded; patch embedding and the classifier head are
// included. This is the convention under which DeiT-S/224 totals 4.6e9.
struct ModelSpec {
    std::string name;
    int depth = 0;
    int dim = 0;
    int heads = 0;
    double mlp_ratio = 4.0;
    int patch = 16;
    int resolution = 224;
    int classes = 1000;
    int input_channels = 3;

    int grid_side() const { return resolution / patch; }
    int initial_tokens() const { return grid_side() * grid_side() + 1; }
};

// deit-s, deit-b, deit-b-384, vit-l.
ModelSpec preset(std::string_view name);
std::vector<std::string> preset_names();

std::uint64_t attention_flops(int tokens, const ModelSpec& spec);
std::uint64_t mlp_flops(int tokens, const ModelSpec& spec);

// attention + mlp at the same token count: 12*N*C^2 + 2*N^2*C.
std::uint64_t block_flops(int tokens, const ModelSpec& spec);

std::uint64_t embed_flops(const ModelSpec& spec);
std::uint64_t head_flops(const ModelSpec& spec);

// Post-reduction token count entering each block's MLP and the next
// block; non-increasing, at least 1.
struct TokenSchedule {
    std::vector<int> counts;
};

// Whole-model cost for a reduction schedule. The reduction sits between
// attention and MLP, so layer l runs attention at the previous layer's
// count and its MLP at counts[l].
std::uint64_t schedule_flops(const TokenSchedule& schedule, const ModelSpec& spec);

TokenSchedule baseline_schedule(const ModelSpec& spec);

// Pruning cascade: at each listed layer the non-aggregate image tokens
// shrink to ceil(keep_ratio * previous), with one aggregate token carried
// along from the first pruning layer onward.
TokenSchedule nap_schedule(const ModelSpec& spec, double keep_ratio,
                           const std::vector<int>& layers);

// Constant merge rate: every layer removes r tokens.
TokenSchedule mat_schedule(const ModelSpec& spec, int r);

// Hybrid cascade; steps are per layer (a single entry is broadcast).
TokenSchedule hynap_schedule(const ModelSpec& spec, const std::vector<hynap::HybridStep>& steps);

}  // namespace napmat::flops
