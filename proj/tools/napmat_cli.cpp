// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0
//
// napmat command line front end.
//
//   order   emit a space-filling-curve permutation as JSON or PGM
//   run     full pipeline on an image or synthetic batch, JSON report
//   flops   analytic compute cost of a model preset under a schedule
//   ablate  locality and adjacent-similarity comparison of orderings
//   bench   reduction-kernel microbenchmarks with scaling fits
//
// Exit codes: 0 success, 2 configuration error, 3 input error.

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "napmat/bench.hpp"
#include "napmat/errors.hpp"
#include "napmat/flops.hpp"
#include "napmat/netpbm.hpp"
#include "napmat/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;

using nlohmann::ordered_json;

void write_output(const ordered_json& json, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << json.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw napmat::InputError("cannot write output file: " + path);
    out << json.dump(2) << "\n";
}

// Configuration file first, then explicit --set overrides, then the
// environment seed override.
napmat::PipelineConfig assemble_config(const std::string& config_path,
                                       const std::vector<std::string>& overrides) {
    napmat::PipelineConfig cfg;
    if (!config_path.empty()) napmat::load_config_file(cfg, config_path);
    for (const std::string& entry : overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) {
            throw napmat::ConfigError("--set expects key=value, got '" + entry + "'");
        }
        napmat::apply_config_entry(cfg, entry.substr(0, eq), entry.substr(eq + 1));
    }
    if (const char* env_seed = std::getenv("NAPMAT_SEED")) {
        napmat::apply_config_entry(cfg, "seed", env_seed);
    }
    return cfg;
}

napmat::flops::TokenSchedule parse_schedule_arg(const std::string& arg,
                                                const napmat::flops::ModelSpec& spec) {
    std::string text = arg;
    const bool at_file = !arg.empty() && arg[0] == '@';
    if (at_file || std::filesystem::exists(arg)) {
        const std::string path = at_file ? arg.substr(1) : arg;
        std::ifstream in(path);
        if (!in) throw napmat::InputError("cannot open schedule file: " + path);
        std::string line, joined;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            joined += line + ",";
        }
        text = joined;
    }
    // counts separated by commas and/or whitespace
    napmat::flops::TokenSchedule schedule;
    std::string item;
    for (char c : text + " ") {
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
            if (!item.empty()) {
                try {
                    schedule.counts.push_back(std::stoi(item));
                } catch (const std::exception&) {
                    throw napmat::InputError("schedule entries must be integers, got '" + item +
                                             "'");
                }
                item.clear();
            }
            continue;
        }
        item.push_back(c);
    }
    if (static_cast<int>(schedule.counts.size()) != spec.depth) {
        throw napmat::InputError("schedule must list " + std::to_string(spec.depth) +
                                 " token counts");
    }
    return schedule;
}

int cmd_order(int rows, int cols, const std::string& kind, const std::string& emit,
              const std::string& out_path) {
    const napmat::CurveKind parsed = napmat::parse_curve_kind(kind);
    const napmat::CurveOrder order = napmat::build_order({rows, cols}, parsed);

    if (emit == "json") {
        ordered_json j;
        j["rows"] = rows;
        j["cols"] = cols;
        j["kind"] = std::string(napmat::to_string(parsed));
        ordered_json perm = ordered_json::array();
        for (const napmat::Cell& cell : order.perm) perm.push_back({cell.row, cell.col});
        j["perm"] = perm;
        write_output(j, out_path);
        return 0;
    }
    if (emit == "pgm") {
        napmat::Raster img;
        img.width = cols;
        img.height = rows;
        img.channels = 1;
        img.pixels.resize(static_cast<std::size_t>(rows) * cols);
        const int cells = rows * cols;
        for (int k = 0; k < cells; ++k) {
            const napmat::Cell cell = order.perm[static_cast<std::size_t>(k)];
            const int value = cells > 1 ? k * 255 / (cells - 1) : 0;
            img.at(cell.col, cell.row) = static_cast<std::uint8_t>(value);
        }
        napmat::save_netpbm(img, out_path.empty() ? "order.pgm" : out_path);
        return 0;
    }
    throw napmat::ConfigError("--emit must be json or pgm");
}

int cmd_run(const napmat::PipelineConfig& cfg, const std::string& image_path, int synth_batch,
            int synth_rows, int synth_cols, const std::string& report_path,
            const std::string& render_prefix) {
    napmat::PipelineInput input;
    if (!image_path.empty()) {
        const napmat::Raster image = napmat::load_netpbm(image_path);
        try {
            input = napmat::image_input(image, cfg);
        } catch (const napmat::ShapeError& e) {
            throw napmat::InputError(e.what());  // bad image geometry
        }
        input.source = "image:" + image_path;
    } else {
        input = napmat::synthetic_input(synth_batch, {synth_rows, synth_cols}, cfg);
    }

    napmat::RunReport report = napmat::run_pipeline(cfg, input);
    if (!render_prefix.empty()) {
        for (std::size_t i = 0; i < report.renders.size(); ++i) {
            const std::string path =
                render_prefix + "_layer" + std::to_string(report.render_layers[i]) + ".pgm";
            napmat::save_netpbm(report.renders[i], path);
        }
    }
    write_output(report.json, report_path);
    return 0;
}

int cmd_flops(const std::string& model, const std::string& schedule_arg,
              const std::string& method, double keep, const std::string& layers_arg, int mat_r,
              const std::string& hybrid_arg, const std::string& out_path) {
    const napmat::flops::ModelSpec spec = napmat::flops::preset(model);
    napmat::flops::TokenSchedule schedule;
    std::string source;
    if (!schedule_arg.empty()) {
        schedule = parse_schedule_arg(schedule_arg, spec);
        source = "explicit";
    } else if (method == "none" || method.empty()) {
        schedule = napmat::flops::baseline_schedule(spec);
        source = "baseline";
    } else if (method == "nap") {
        std::vector<int> layers;
        for (const std::string& part : {layers_arg}) {
            std::string item;
            std::stringstream ss(part);
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) layers.push_back(std::stoi(item));
            }
        }
        schedule = napmat::flops::nap_schedule(spec, keep, layers);
        source = "nap";
    } else if (method == "mat") {
        schedule = napmat::flops::mat_schedule(spec, mat_r);
        source = "mat";
    } else if (method == "hynap") {
        std::vector<napmat::hynap::HybridStep> steps;
        std::string item;
        std::stringstream ss(hybrid_arg);
        while (std::getline(ss, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw napmat::ConfigError("--hybrid expects prune:merge pairs");
            }
            steps.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
        }
        schedule = napmat::flops::hynap_schedule(spec, steps);
        source = "hynap";
    } else {
        throw napmat::ConfigError("--method must be none, nap, mat or hynap");
    }

    ordered_json j;
    j["model"] = spec.name;
    j["depth"] = spec.depth;
    j["dim"] = spec.dim;
    j["initial_tokens"] = spec.initial_tokens();
    j["schedule_source"] = source;
    j["schedule"] = schedule.counts;
    j["convention"] = "multiply-add = 1 FLOP";
    ordered_json per_layer = ordered_json::array();
    int previous = spec.initial_tokens();
    for (int count : schedule.counts) {
        per_layer.push_back({{"attention_tokens", previous},
                             {"mlp_tokens", count},
                             {"attention", napmat::flops::attention_flops(previous, spec)},
                             {"mlp", napmat::flops::mlp_flops(count, spec)}});
        previous = count;
    }
    j["per_layer"] = per_layer;
    j["embed"] = napmat::flops::embed_flops(spec);
    j["head"] = napmat::flops::head_flops(spec);
    j["total"] = napmat::flops::schedule_flops(schedule, spec);
    j["total_gflops"] = static_cast<double>(napmat::flops::schedule_flops(schedule, spec)) / 1e9;
    write_output(j, out_path);
    return 0;
}

int cmd_ablate(const napmat::PipelineConfig& cfg, int rows, int cols,
               const std::vector<std::string>& images, int synthetic, const std::string& out_path) {
    std::vector<napmat::Raster> corpus;
    for (const std::string& path : images) corpus.push_back(napmat::load_netpbm(path));
    for (int i = 0; i < synthetic; ++i) {
        corpus.push_back(napmat::synthetic_raster(cols * cfg.patch, rows * cfg.patch, 3,
                                                  cfg.seed + static_cast<std::uint64_t>(i)));
    }
    const ordered_json j =
        napmat::ablate_ordering({rows, cols}, {1, 2, 3, 4}, corpus, cfg);
    write_output(j, out_path);
    return 0;
}

int cmd_bench(std::vector<int> sizes, int channels, double target_ms,
              const std::string& out_path) {
    napmat::bench::BenchOptions options;
    if (!sizes.empty()) options.sizes = std::move(sizes);
    options.channels = channels;
    options.target_ms = target_ms;
    const napmat::bench::BenchReport report = napmat::bench::run_bench(options);
    write_output(report.json, out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neighbor-aware token reduction toolkit"};
    app.require_subcommand(1);

    // order
    auto* order = app.add_subcommand("order", "emit a curve permutation");
    int rows = 14, cols = 14;
    std::string kind = "hilbert", emit = "json", order_out;
    order->add_option("--rows", rows, "grid rows")->required();
    order->add_option("--cols", cols, "grid cols")->required();
    order->add_option("--kind", kind, "hilbert|row|boustro|z");
    order->add_option("--emit", emit, "json|pgm");
    order->add_option("--out", order_out, "output path (default stdout / order.pgm)");

    // shared config plumbing
    std::string config_path;
    std::vector<std::string> overrides;

    // run
    auto* run = app.add_subcommand("run", "run the reduction pipeline");
    std::string image_path, report_path, render_prefix, method_flag, order_flag;
    int synth_batch = 1, synth_rows = 14, synth_cols = 14, depth_flag = -1;
    run->add_option("--config", config_path, "key=value config file");
    run->add_option("--set", overrides, "config override key=value (repeatable)");
    run->add_option("--input", image_path, "PGM (P5) or PPM (P6) image");
    run->add_option("--synthetic-batch", synth_batch, "synthetic batch size");
    run->add_option("--synthetic-rows", synth_rows, "synthetic grid rows");
    run->add_option("--synthetic-cols", synth_cols, "synthetic grid cols");
    run->add_option("--method", method_flag, "none|nap|mat|hynap");
    run->add_option("--order", order_flag, "hilbert|row|boustro|z");
    run->add_option("--depth", depth_flag, "block count");
    run->add_option("--report", report_path, "report path (default stdout)");
    run->add_option("--render", render_prefix, "write <prefix>_layerN.pgm fate maps");

    // flops
    auto* flops = app.add_subcommand("flops", "analytic FLOPs for a model preset");
    std::string model, schedule_arg, flops_method = "none", flops_layers = "3,6,9", hybrid_arg,
                flops_out;
    double flops_keep = 0.7;
    int flops_mat_r = 13;
    flops->add_option("--model", model, "deit-s|deit-b|deit-b-384|vit-l")->required();
    flops->add_option("--schedule", schedule_arg,
                      "per-layer token counts, inline csv or @file");
    flops->add_option("--method", flops_method, "none|nap|mat|hynap schedule generator");
    flops->add_option("--keep", flops_keep, "nap keep ratio");
    flops->add_option("--layers", flops_layers, "nap reduction layers");
    flops->add_option("--mat-r", flops_mat_r, "mat merges per layer");
    flops->add_option("--hybrid", hybrid_arg, "hynap prune:merge pairs");
    flops->add_option("--out", flops_out, "output path (default stdout)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "compare token orderings");
    int ab_rows = 14, ab_cols = 14, ab_synth = 0;
    std::vector<std::string> ab_images;
    std::string ab_out;
    ablate->add_option("--config", config_path, "key=value config file");
    ablate->add_option("--set", overrides, "config override key=value (repeatable)");
    ablate->add_option("--rows", ab_rows, "grid rows");
    ablate->add_option("--cols", ab_cols, "grid cols");
    ablate->add_option("--images", ab_images, "PPM/PGM corpus files");
    ablate->add_option("--synthetic", ab_synth, "generate N synthetic corpus images");
    ablate->add_option("--out", ab_out, "output path (default stdout)");

    // bench
    auto* bench = app.add_subcommand("bench", "microbenchmark the reduction kernels");
    std::vector<int> bench_sizes;
    int bench_channels = 64;
    double bench_target = 80.0;
    std::string bench_out;
    bench->add_option("--sizes", bench_sizes, "token counts to sweep");
    bench->add_option("--channels", bench_channels, "feature channels");
    bench->add_option("--target-ms", bench_target, "per-kernel measurement budget");
    bench->add_option("--out", bench_out, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (order->parsed()) return cmd_order(rows, cols, kind, emit, order_out);
        if (run->parsed()) {
            napmat::PipelineConfig cfg = assemble_config(config_path, overrides);
            if (!method_flag.empty()) cfg.method = napmat::parse_method(method_flag);
            if (!order_flag.empty()) cfg.order = napmat::parse_curve_kind(order_flag);
            if (depth_flag > 0) cfg.depth = depth_flag;
            return cmd_run(cfg, image_path, synth_batch, synth_rows, synth_cols, report_path,
                           render_prefix);
        }
        if (flops->parsed()) {
            return cmd_flops(model, schedule_arg, flops_method, flops_keep, flops_layers,
                             flops_mat_r, hybrid_arg, flops_out);
        }
        if (ablate->parsed()) {
            napmat::PipelineConfig cfg = assemble_config(config_path, overrides);
            return cmd_ablate(cfg, ab_rows, ab_cols, ab_images, ab_synth, ab_out);
        }
        if (bench->parsed()) {
            return cmd_bench(bench_sizes, bench_channels, bench_target, bench_out);
        }
    } catch (const napmat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const napmat::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
