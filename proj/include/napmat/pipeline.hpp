// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "napmat/grid.hpp"
#include "napmat/hynap.hpp"
#include "napmat/mat.hpp"
#include "napmat/nap.hpp"
#include "napmat/netpbm.hpp"
#include "napmat/tokens.hpp"
#include "napmat/toy_vit.hpp"

namespace napmat {

enum class Method { None, Nap, Mat, Hynap };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct PipelineConfig {
    // toy model
    int dim = 64;
    int heads = 4;
    int depth = 12;
    double mlp_ratio = 4.0;
    std::uint64_t seed = 42;
    int patch = 16;
    bool size_weighted_attention = true;
    // When false, the pruning aggregate stops acting as an attention key
    // in later layers (it still rides along and goes through the MLP).
    bool fused_attends = true;

    CurveKind order = CurveKind::Hilbert;
    Method method = Method::None;

    // neighbor-aware pruning
    int nap_radius = 3;
    double nap_alpha = 0.1;
    double nap_keep_ratio = 0.7;
    std::vector<int> nap_layers = {3, 6, 9};
    nap::FusedWeighting nap_weighting = nap::FusedWeighting::Xi;

    // adjacent-token merging
    mat::SimilarityConfig mat_similarity;
    int mat_r = 8;
    int mat_protected = 1;

    // hybrid; one entry is broadcast across all layers
    std::vector<hynap::HybridStep> hynap_schedule = {{2, 10}};

    bool include_timing = true;

    BlockConfig block_config() const;
    void validate() const;
};

// key=value configuration, '#' comments; unknown keys are errors.
void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value);
void load_config_file(PipelineConfig& cfg, const std::string& path);

struct PipelineInput {
    TokenBatch tokens;
    std::string source;               // echoed into the report
    std::uint64_t embed_flops = 0;    // 0 for synthetic batches
};

PipelineInput image_input(const Raster& image, const PipelineConfig& cfg);
PipelineInput synthetic_input(int batch, GridShape grid, const PipelineConfig& cfg);

struct RunReport {
    nlohmann::ordered_json json;
    std::vector<Raster> renders;      // one fate map per reduction layer
    std::vector<int> render_layers;
};

// Token count entering each layer's MLP (and the next layer), derived
// without running the model. Throws ConfigError when the schedule is
// infeasible for this token count.
std::vector<int> expected_token_counts(const PipelineConfig& cfg, int initial_tokens,
                                       int protected_count);

// embed -> reorder -> depth x (attention -> reduction -> mlp).
RunReport run_pipeline(const PipelineConfig& cfg, const PipelineInput& input);

// Locality scores per ordering plus, when a corpus is given, the mean
// cosine similarity of sequence-adjacent embedded tokens per ordering.
nlohmann::ordered_json ablate_ordering(GridShape grid, const std::vector<int>& radii,
                                       const std::vector<Raster>& corpus,
                                       const PipelineConfig& cfg);

}  // namespace napmat
