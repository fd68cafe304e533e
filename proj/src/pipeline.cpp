// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "napmat/detail/vecmath.hpp"
#include "napmat/errors.hpp"

namespace napmat {
namespace {

using nlohmann::ordered_json;

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

int parse_int(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
    }
}

double parse_double(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
    std::vector<int> out;
    std::string item;
    std::stringstream ss(value);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_int(item, key));
    }
    return out;
}

std::vector<hynap::HybridStep> parse_hybrid(const std::string& value, const std::string& key) {
    std::vector<hynap::HybridStep> out;
    std::string item;
    std::stringstream ss(value);
    while (std::getline(ss, item, ',')) {
        const std::size_t colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("config key '" + key + "': expected prune:merge pairs, got '" +
                              value + "'");
        }
        out.push_back({parse_int(item.substr(0, colon), key),
                       parse_int(item.substr(colon + 1), key)});
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty schedule");
    return out;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

ordered_json config_json(const PipelineConfig& cfg) {
    ordered_json j;
    j["dim"] = cfg.dim;
    j["heads"] = cfg.heads;
    j["depth"] = cfg.depth;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["seed"] = cfg.seed;
    j["patch"] = cfg.patch;
    j["order"] = std::string(to_string(cfg.order));
    j["method"] = std::string(to_string(cfg.method));
    j["size_weighted_attention"] = cfg.size_weighted_attention;
    j["fused_attends"] = cfg.fused_attends;
    j["nap"] = {{"radius", cfg.nap_radius},
                {"alpha", cfg.nap_alpha},
                {"keep_ratio", cfg.nap_keep_ratio},
                {"layers", cfg.nap_layers},
                {"fused_weighting",
                 cfg.nap_weighting == nap::FusedWeighting::Xi ? "xi" : "uniform"}};
    j["mat"] = {{"metric", std::string(mat::to_string(cfg.mat_similarity.metric))},
                {"feature", std::string(mat::to_string(cfg.mat_similarity.feature))},
                {"r_per_layer", cfg.mat_r},
                {"protected", cfg.mat_protected}};
    ordered_json steps = ordered_json::array();
    for (const auto& s : cfg.hynap_schedule) {
        steps.push_back({{"prune", s.prune_count}, {"merge", s.merge_count}});
    }
    j["hynap"] = {{"schedule", steps}};
    return j;
}

hynap::HybridStep hybrid_step_at(const PipelineConfig& cfg, int layer) {
    if (cfg.hynap_schedule.size() == 1) return cfg.hynap_schedule[0];
    return cfg.hynap_schedule.at(static_cast<std::size_t>(layer));
}

// Fate of every original grid cell after a reduction layer, sample 0:
// untouched singleton 255, merged 128, folded into the aggregate 0.
Raster fate_map(const TokenBatch& tokens, int fused_index) {
    Raster map;
    map.width = tokens.grid.cols;
    map.height = tokens.grid.rows;
    map.channels = 1;
    map.pixels.assign(static_cast<std::size_t>(map.width) * map.height, 0);
    for (int t = tokens.protected_count; t < tokens.tokens; ++t) {
        const auto& cells = tokens.prov(0, t);
        const std::uint8_t fate = (t == fused_index) ? 0 : (cells.size() > 1 ? 128 : 255);
        for (std::uint32_t cell : cells) {
            map.pixels[cell] = fate;
        }
    }
    return map;
}

}  // namespace

std::string_view to_string(Method method) {
    switch (method) {
        case Method::None: return "none";
        case Method::Nap: return "nap";
        case Method::Mat: return "mat";
        case Method::Hynap: return "hynap";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    if (name == "none") return Method::None;
    if (name == "nap") return Method::Nap;
    if (name == "mat") return Method::Mat;
    if (name == "hynap") return Method::Hynap;
    throw ConfigError("unknown method: " + std::string(name));
}

BlockConfig PipelineConfig::block_config() const {
    BlockConfig bc;
    bc.dim = dim;
    bc.heads = heads;
    bc.mlp_ratio = mlp_ratio;
    bc.depth = depth;
    bc.seed = seed;
    bc.size_weighted_attention = size_weighted_attention;
    return bc;
}

void PipelineConfig::validate() const {
    block_config().validate();
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (nap_radius < 0) throw ConfigError("nap.radius must be >= 0");
    if (nap_alpha < 0.0 || nap_alpha > 1.0) throw ConfigError("nap.alpha must lie in [0, 1]");
    if (!(nap_keep_ratio > 0.0) || nap_keep_ratio > 1.0) {
        throw ConfigError("nap.keep_ratio must lie in (0, 1]");
    }
    if (mat_r < 0) throw ConfigError("mat.r_per_layer must be >= 0");
    if (mat_protected < 0) throw ConfigError("mat.protected must be >= 0");
    // Settings of inactive methods may stay at their defaults even when
    // those defaults do not fit this depth.
    if (method == Method::Nap) {
        for (int layer : nap_layers) {
            if (layer < 0 || layer >= depth) {
                throw ConfigError("nap.layers entries must lie in [0, depth)");
            }
        }
    }
    if (method == Method::Hynap) {
        if (hynap_schedule.empty()) throw ConfigError("hynap.schedule must not be empty");
        if (hynap_schedule.size() != 1 &&
            hynap_schedule.size() != static_cast<std::size_t>(depth)) {
            throw ConfigError("hynap.schedule must have one entry or one per layer");
        }
        for (const auto& step : hynap_schedule) {
            if (step.prune_count < 0 || step.merge_count < 0) {
                throw ConfigError("hynap.schedule counts must be >= 0");
            }
        }
    }
}

void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "dim") cfg.dim = parse_int(value, key);
    else if (key == "heads") cfg.heads = parse_int(value, key);
    else if (key == "depth") cfg.depth = parse_int(value, key);
    else if (key == "mlp_ratio") cfg.mlp_ratio = parse_double(value, key);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "patch") cfg.patch = parse_int(value, key);
    else if (key == "order") cfg.order = parse_curve_kind(value);
    else if (key == "method") cfg.method = parse_method(value);
    else if (key == "size_weighted_attention") cfg.size_weighted_attention = parse_bool(value, key);
    else if (key == "fused_attends") cfg.fused_attends = parse_bool(value, key);
    else if (key == "nap.radius") cfg.nap_radius = parse_int(value, key);
    else if (key == "nap.alpha") cfg.nap_alpha = parse_double(value, key);
    else if (key == "nap.keep_ratio") cfg.nap_keep_ratio = parse_double(value, key);
    else if (key == "nap.layers") cfg.nap_layers = parse_int_list(value, key);
    else if (key == "nap.fused_weighting") {
        if (value == "xi") cfg.nap_weighting = nap::FusedWeighting::Xi;
        else if (value == "uniform") cfg.nap_weighting = nap::FusedWeighting::Uniform;
        else throw ConfigError("nap.fused_weighting must be xi or uniform");
    } else if (key == "mat.metric") cfg.mat_similarity.metric = mat::parse_metric(value);
    else if (key == "mat.feature") cfg.mat_similarity.feature = mat::parse_feature(value);
    else if (key == "mat.r_per_layer") cfg.mat_r = parse_int(value, key);
    else if (key == "mat.protected") cfg.mat_protected = parse_int(value, key);
    else if (key == "hynap.schedule") cfg.hynap_schedule = parse_hybrid(value, key);
    else throw ConfigError("unknown config key: " + key);
}

void load_config_file(PipelineConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

PipelineInput image_input(const Raster& image, const PipelineConfig& cfg) {
    EmbedResult embedded = embed_patches(image, cfg.patch, cfg.dim, cfg.seed);
    PipelineInput input;
    input.embed_flops = static_cast<std::uint64_t>(embedded.grid.cells()) *
                        static_cast<std::uint64_t>(cfg.dim) *
                        static_cast<std::uint64_t>(cfg.patch) *
                        static_cast<std::uint64_t>(cfg.patch) *
                        static_cast<std::uint64_t>(image.channels);
    input.tokens = std::move(embedded.tokens);
    input.source = "image:" + std::to_string(image.width) + "x" + std::to_string(image.height) +
                   "x" + std::to_string(image.channels);
    return input;
}

PipelineInput synthetic_input(int batch, GridShape grid, const PipelineConfig& cfg) {
    const int prot = cfg.method == Method::Mat ? cfg.mat_protected : 1;
    PipelineInput input;
    input.tokens = synthetic_tokens(batch, grid, cfg.dim, cfg.seed, prot);
    input.source = "synthetic:" + std::to_string(batch) + "x" + std::to_string(grid.rows) + "x" +
                   std::to_string(grid.cols);
    return input;
}

std::vector<int> expected_token_counts(const PipelineConfig& cfg, int initial_tokens,
                                       int protected_count) {
    cfg.validate();
    const int p = protected_count;
    int image = initial_tokens - p;
    if (image < 1) throw ConfigError("no image tokens to run on");
    bool fused = false;

    std::vector<int> counts;
    counts.reserve(static_cast<std::size_t>(cfg.depth));
    for (int layer = 0; layer < cfg.depth; ++layer) {
        switch (cfg.method) {
            case Method::None:
                break;
            case Method::Nap: {
                if (std::find(cfg.nap_layers.begin(), cfg.nap_layers.end(), layer) !=
                    cfg.nap_layers.end()) {
                    const int keep = static_cast<int>(std::ceil(cfg.nap_keep_ratio * image));
                    if (keep < 1) throw ConfigError("keep ratio leaves no tokens");
                    if (keep < image) fused = true;
                    image = keep;
                }
                break;
            }
            case Method::Mat: {
                const int pairs = image - 1;
                if (cfg.mat_r > pairs) {
                    throw ConfigError("mat.r_per_layer exceeds adjacent pairs at layer " +
                                      std::to_string(layer));
                }
                image -= cfg.mat_r;
                break;
            }
            case Method::Hynap: {
                const hynap::HybridStep step = hybrid_step_at(cfg, layer);
                if (step.prune_count > image) {
                    throw ConfigError("hynap prune count exceeds tokens at layer " +
                                      std::to_string(layer));
                }
                const int kept = image - step.prune_count;
                if (step.merge_count > 0 && 2 * step.merge_count >= kept) {
                    throw ConfigError("hynap merge count must be under half the kept tokens");
                }
                if (step.prune_count > 0) fused = true;
                image = kept - step.merge_count;
                if (image < 1) throw ConfigError("hybrid schedule exhausts the tokens");
                break;
            }
        }
        counts.push_back(p + image + (fused ? 1 : 0));
    }
    return counts;
}

RunReport run_pipeline(const PipelineConfig& cfg, const PipelineInput& input) {
    cfg.validate();
    input.tokens.validate();
    const int p = input.tokens.protected_count;
    if ((cfg.method == Method::Nap || cfg.method == Method::Hynap) && p != 1) {
        throw ConfigError("nap/hynap need exactly one protected class token");
    }
    if (cfg.method == Method::Mat && p != cfg.mat_protected) {
        throw ConfigError("mat.protected does not match the input batch");
    }

    const std::vector<int> expected = expected_token_counts(cfg, input.tokens.tokens, p);
    const BlockConfig bcfg = cfg.block_config();
    const nap::NeighborKernel kernel = nap::build_kernel(cfg.nap_radius);

    const std::int64_t start_ns = now_ns();
    auto order = cached_order(input.tokens.grid, cfg.order);
    TokenBatch tokens = reorder_tokens(input.tokens, *order);
    const std::int64_t reorder_done_ns = now_ns();

    RunReport report;
    ordered_json layers = ordered_json::array();
    std::vector<int> counts;
    int fused_index = -1;
    std::int64_t attention_ns = 0, reduction_ns = 0, mlp_ns = 0;

    for (int layer = 0; layer < cfg.depth; ++layer) {
        const int pre_count = tokens.tokens;
        std::int64_t t0 = now_ns();
        const int silent = (!cfg.fused_attends && fused_index >= 0) ? fused_index : -1;
        AttentionResult attn = attention_forward(tokens, bcfg, layer, silent);
        tokens = std::move(attn.tokens);
        std::int64_t t1 = now_ns();
        attention_ns += t1 - t0;

        ordered_json reduction;
        bool reduced = false;
        switch (cfg.method) {
            case Method::None:
                break;
            case Method::Nap: {
                if (std::find(cfg.nap_layers.begin(), cfg.nap_layers.end(), layer) ==
                    cfg.nap_layers.end()) {
                    break;
                }
                reduced = true;
                const nap::ImportanceVector iv =
                    nap::score_tokens(attn.attn, kernel, cfg.nap_alpha);
                const int candidates = tokens.image_tokens() - (fused_index >= 0 ? 1 : 0);
                const int keep = static_cast<int>(std::ceil(cfg.nap_keep_ratio * candidates));
                nap::PruneResult pr = nap::prune_to_count(tokens, iv.xi, std::min(keep, candidates),
                                                          cfg.nap_weighting, fused_index);
                const bool has_fused = !pr.plan.samples[0].fused_sources.empty();
                tokens = std::move(pr.tokens);
                fused_index = has_fused ? tokens.tokens - 1 : -1;

                const auto& sample = pr.plan.samples[0];
                reduction["method"] = "nap";
                reduction["kept"] = sample.keep;
                reduction["fused_sources"] = sample.fused_sources;
                if (has_fused) {
                    reduction["fused_provenance"] = tokens.prov(0, fused_index);
                }
                break;
            }
            case Method::Mat: {
                reduced = true;
                mat::MatResult mr =
                    mat_reduce(tokens, &attn.keys, cfg.mat_similarity, cfg.mat_r);
                const auto& plan = mr.plans[0];
                reduction["method"] = "mat";
                reduction["selected_pairs"] = plan.selected;
                reduction["dest"] = plan.dests.dest;
                reduction["source"] = plan.dests.source;
                reduction["filled"] = plan.dests.filled;
                ordered_json merged = ordered_json::array();
                for (std::size_t k = 0; k < plan.dests.filled.size(); ++k) {
                    if (k == 0 || plan.dests.filled[k] != plan.dests.filled[k - 1]) {
                        ordered_json group;
                        group["dest"] = plan.dests.filled[k];
                        ordered_json sources = ordered_json::array();
                        for (std::size_t e = k; e < plan.dests.filled.size() &&
                                                plan.dests.filled[e] == plan.dests.filled[k];
                             ++e) {
                            sources.push_back(plan.dests.source[e]);
                        }
                        group["sources"] = sources;
                        merged.push_back(group);
                    }
                }
                reduction["merged"] = merged;
                tokens = std::move(mr.tokens);
                break;
            }
            case Method::Hynap: {
                reduced = true;
                const hynap::HybridStep step = hybrid_step_at(cfg, layer);
                hynap::NapOptions options{cfg.nap_radius, cfg.nap_alpha, cfg.nap_weighting};
                hynap::HynapResult hr =
                    hynap::hynap_layer(tokens, attn.attn, attn.keys, step, options, fused_index);
                const bool has_fused = fused_index >= 0 || step.prune_count > 0;
                tokens = std::move(hr.tokens);
                fused_index = has_fused ? tokens.tokens - 1 : -1;

                reduction["method"] = "hynap";
                reduction["prune_count"] = step.prune_count;
                reduction["merge_count"] = step.merge_count;
                if (!hr.plan.prune.samples.empty()) {
                    reduction["kept"] = hr.plan.prune.samples[0].keep;
                    reduction["fused_sources"] = hr.plan.prune.samples[0].fused_sources;
                }
                if (!hr.plan.bsm.empty()) {
                    ordered_json edges = ordered_json::array();
                    for (const auto& e : hr.plan.bsm[0].merged) {
                        edges.push_back(
                            {{"source", e.source}, {"dest", e.dest}, {"sim", e.similarity}});
                    }
                    reduction["merge_edges"] = edges;
                }
                if (has_fused) reduction["fused_provenance"] = tokens.prov(0, fused_index);
                break;
            }
        }
        std::int64_t t2 = now_ns();
        reduction_ns += t2 - t1;

        if (reduced) {
            report.renders.push_back(fate_map(tokens, fused_index));
            report.render_layers.push_back(layer);
        }

        tokens = mlp_forward(tokens, bcfg, layer);
        mlp_ns += now_ns() - t2;

        counts.push_back(tokens.tokens);
        ordered_json lj;
        lj["layer"] = layer;
        lj["attention_tokens"] = pre_count;
        lj["tokens_out"] = tokens.tokens;
        lj["reduction"] = reduced ? reduction : ordered_json(nullptr);
        layers.push_back(lj);
    }

    if (counts != expected) {
        throw std::logic_error("pipeline token counts diverged from the closed form");
    }

    // Analytic cost of this run: attention at the entering count, MLP at
    // the post-reduction count. Multiply-accumulate counted as one FLOP.
    const std::uint64_t c64 = static_cast<std::uint64_t>(cfg.dim);
    const std::uint64_t hidden = static_cast<std::uint64_t>(cfg.mlp_ratio * cfg.dim);
    std::uint64_t block_total = 0;
    ordered_json flops_layers = ordered_json::array();
    int previous = input.tokens.tokens;
    for (int count : counts) {
        const std::uint64_t n_pre = static_cast<std::uint64_t>(previous);
        const std::uint64_t n_post = static_cast<std::uint64_t>(count);
        const std::uint64_t attn_fl = 4 * n_pre * c64 * c64 + 2 * n_pre * n_pre * c64;
        const std::uint64_t mlp_fl = 2 * n_post * c64 * hidden;
        flops_layers.push_back({{"attention", attn_fl}, {"mlp", mlp_fl}});
        block_total += attn_fl + mlp_fl;
        previous = count;
    }

    ordered_json& j = report.json;
    j["schema_version"] = 1;
    j["config"] = config_json(cfg);
    j["input"] = input.source;
    j["grid"] = {{"rows", input.tokens.grid.rows}, {"cols", input.tokens.grid.cols}};
    j["token_counts"] = {{"initial", input.tokens.tokens}, {"per_layer", counts}};
    j["layers"] = layers;
    j["flops"] = {{"convention", "multiply-add = 1 FLOP"},
                  {"embed", input.embed_flops},
                  {"blocks", block_total},
                  {"total", input.embed_flops + block_total},
                  {"per_layer", flops_layers}};
    ordered_json locality;
    const int cells = input.tokens.grid.cells();
    for (int radius = 1; radius <= 4 && radius < cells; ++radius) {
        locality["radius_" + std::to_string(radius)] = locality_score(*order, radius);
    }
    j["locality"] = {{"kind", std::string(to_string(cfg.order))}, {"scores", locality}};
    if (cfg.include_timing) {
        j["timing_ns"] = {{"reorder", reorder_done_ns - start_ns},
                          {"attention", attention_ns},
                          {"reduction", reduction_ns},
                          {"mlp", mlp_ns},
                          {"total", now_ns() - start_ns}};
    }
    return report;
}

nlohmann::ordered_json ablate_ordering(GridShape grid, const std::vector<int>& radii,
                                       const std::vector<Raster>& corpus,
                                       const PipelineConfig& cfg) {
    const std::vector<CurveKind> kinds = {CurveKind::Hilbert, CurveKind::RowMajor,
                                          CurveKind::Boustrophedon, CurveKind::ZOrder};

    // Embed once; reorder per kind.
    std::vector<TokenBatch> embedded;
    embedded.reserve(corpus.size());
    for (const Raster& image : corpus) {
        EmbedResult er = embed_patches(image, cfg.patch, cfg.dim, cfg.seed);
        if (!(er.grid == grid)) {
            throw InputError("corpus image does not match the requested grid");
        }
        embedded.push_back(std::move(er.tokens));
    }

    ordered_json out;
    out["grid"] = {{"rows", grid.rows}, {"cols", grid.cols}};
    out["radii"] = radii;
    out["images"] = corpus.size();
    ordered_json rows = ordered_json::array();
    for (CurveKind kind : kinds) {
        auto order = cached_order(grid, kind);
        ordered_json row;
        row["kind"] = std::string(to_string(kind));
        ordered_json loc;
        for (int radius : radii) {
            if (radius < 1 || radius >= grid.cells()) continue;
            loc[std::to_string(radius)] = locality_score(*order, radius);
        }
        row["locality"] = loc;

        if (!embedded.empty()) {
            double total = 0.0;
            std::int64_t pairs = 0;
            for (const TokenBatch& batch : embedded) {
                const TokenBatch reordered = reorder_tokens(batch, *order);
                const int prot = reordered.protected_count;
                for (int t = prot; t + 1 < reordered.tokens; ++t) {
                    const double sim = detail::cosine_pair(reordered.token(0, t),
                                                           reordered.token(0, t + 1),
                                                           reordered.channels);
                    if (std::isfinite(sim)) {
                        total += sim;
                        ++pairs;
                    }
                }
            }
            row["mean_adjacent_cosine"] = pairs > 0 ? total / pairs : 0.0;
        }
        rows.push_back(row);
    }
    out["orderings"] = rows;
    return out;
}

}  // namespace napmat
