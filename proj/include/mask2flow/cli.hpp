#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mask2flow/checkpoint.hpp"
#include "mask2flow/config.hpp"
#include "mask2flow/data.hpp"
#include "mask2flow/di.hpp"
#include "mask2flow/metrics.hpp"
#include "mask2flow/mixture.hpp"
#include "mask2flow/train.hpp"

// Command-line surface. Every run writes a run.json next to its outputs with
// the effective config, seed, git describe string and output hashes, so any
// report can be regenerated from it. Exit codes: 0 ok, 1 user error, 2
// internal.

namespace m2f::cli {

namespace fs = std::filesystem;

inline std::string git_describe() {
    FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[128] = {0};
    std::string out;
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    ::pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

inline std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "missing";
    std::string bytes(std::istreambuf_iterator<char>(f), {});
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return hex;
}

inline void write_run_json(const std::string& path, const std::string& command,
                           const std::vector<std::string>& args, const nlohmann::json& config,
                           uint64_t seed, const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["version"] = 1;
    j["command"] = command;
    j["args"] = args;
    j["config"] = config;
    j["seed"] = seed;
    j["git_describe"] = git_describe();
    j["outputs"] = nlohmann::json::array();
    for (const auto& o : outputs) j["outputs"].push_back({{"path", o}, {"fnv1a64", file_hash_hex(o)}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

inline void require_input(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw std::invalid_argument(what + " not found: " + path);
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    PipelineConfig cfg;
    if (path.empty()) return cfg;
    require_input(path, "config file");
    std::ifstream f(path);
    nlohmann::json j;
    f >> j;
    cfg = j.get<PipelineConfig>();
    return cfg;
}

struct InferOutputs {
    std::vector<DataItem> items;
    std::vector<InferResult> results;
    LoadedFlowModel flow;
    LoadedMaskModel mask;
    bool have_mask = false;
};

inline InferOutputs run_inference(const std::string& data, const std::string& mask_path,
                                  const std::string& flow_path, PriorKind prior, int steps,
                                  uint64_t seed, double chunk_seconds = 0) {
    require_input(data, "manifest");
    require_input(flow_path, "flow checkpoint");
    InferOutputs out;
    out.flow = load_flow_model(flow_path);
    if (!mask_path.empty()) {
        require_input(mask_path, "mask checkpoint");
        out.mask = load_mask_model(mask_path);
        out.have_mask = true;
    }
    if (prior == PriorKind::masked && !out.have_mask)
        throw std::invalid_argument("masked prior requires --mask");
    Manifest manifest = load_manifest(data);
    out.items = load_items(manifest, out.flow.frontend, out.flow.embed, chunk_seconds);
    out.results.reserve(out.items.size());
    for (const auto& it : out.items) {
        MelSpectrogram x{it.x_log, out.flow.frontend};
        out.results.push_back(tse_infer(x, it.d, out.have_mask ? &out.mask.params : nullptr,
                                        out.flow.params, FlowPrior{prior, 1.0}, steps,
                                        seed ^ it.seed));
    }
    return out;
}

inline int run(std::vector<std::string> args) {
    CLI::App app{"mask2flow: two-stage target speaker extraction on log-mel spectrograms"};
    app.require_subcommand(1);

    bool json_errors = false;
    app.add_flag("--json-errors", json_errors, "emit errors as JSON on stderr");

    std::string config_path, out_path, data_path, mask_path, flow_path;
    std::string condition_str = "additive", prior_str = "masked";
    uint64_t seed = 1;
    int steps = 1;

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic mixture dataset");
    int sim_n = 8;
    double sim_duration = 2.0;
    simulate->add_option("--n", sim_n, "number of items");
    simulate->add_option("--condition", condition_str, "clean|additive|reverb");
    simulate->add_option("--seed", seed, "dataset seed");
    simulate->add_option("--out", out_path, "output directory")->required();
    simulate->add_option("--duration", sim_duration, "utterance length in seconds");

    // train-mask / train-flow
    auto* train_mask = app.add_subcommand("train-mask", "train the masking stage");
    auto* train_flow = app.add_subcommand("train-flow", "train the flow stage (mask frozen)");
    int max_steps = -1;
    for (auto* c : {train_mask, train_flow}) {
        c->add_option("--data", data_path, "dataset manifest.json")->required();
        c->add_option("--out", out_path, "output checkpoint path")->required();
        c->add_option("--config", config_path, "pipeline config JSON");
        c->add_option("--seed", seed, "training seed");
        c->add_option("--steps", max_steps, "override max optimizer steps");
    }
    train_flow->add_option("--mask", mask_path, "frozen mask checkpoint (masked prior)");
    train_flow->add_option("--prior", prior_str, "gaussian|mixture|masked");

    // infer
    auto* infer = app.add_subcommand("infer", "run two-stage inference over a manifest");
    bool emit_trajectory = false;
    std::string infer_format = "m2f";
    infer->add_option("--format", infer_format, "m2f|csv matrix output format");
    infer->add_option("--data", data_path)->required();
    infer->add_option("--flow", flow_path, "flow checkpoint")->required();
    infer->add_option("--mask", mask_path, "mask checkpoint");
    infer->add_option("--prior", prior_str, "gaussian|mixture|masked");
    infer->add_option("--steps", steps, "Euler steps");
    infer->add_option("--seed", seed, "noise seed (gaussian prior)");
    infer->add_option("--out", out_path, "output directory")->required();
    infer->add_flag("--emit-trajectory", emit_trajectory, "also write every intermediate state");

    // analyze-di
    auto* analyze = app.add_subcommand("analyze-di", "delete-insert analysis (per-step and stage table)");
    analyze->add_option("--data", data_path)->required();
    analyze->add_option("--flow", flow_path)->required();
    analyze->add_option("--mask", mask_path);
    analyze->add_option("--prior", prior_str);
    analyze->add_option("--steps", steps);
    analyze->add_option("--seed", seed);
    analyze->add_option("--out", out_path, "output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "mel-domain quality metrics over a manifest");
    eval->add_option("--data", data_path)->required();
    eval->add_option("--flow", flow_path)->required();
    eval->add_option("--mask", mask_path);
    eval->add_option("--prior", prior_str);
    eval->add_option("--steps", steps);
    eval->add_option("--seed", seed);
    eval->add_option("--out", out_path, "report JSON path")->required();

    // bench-rtf
    auto* bench = app.add_subcommand("bench-rtf", "real-time-factor measurement");
    std::string bench_mode = "full";
    int repeats = 5, warmup = 3;
    bench->add_option("--data", data_path)->required();
    bench->add_option("--flow", flow_path);
    bench->add_option("--mask", mask_path);
    bench->add_option("--prior", prior_str);
    bench->add_option("--steps", steps);
    bench->add_option("--mode", bench_mode, "mask-only|full");
    bench->add_option("--repeats", repeats);
    bench->add_option("--warmup", warmup);
    bench->add_option("--out", out_path, "result JSON path")->required();

    std::vector<const char*> argv;
    argv.push_back("m2f");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) {  // --help
                std::cout << app.help();
                return 0;
            }
            throw std::invalid_argument(e.what());
        }

        if (simulate->parsed()) {
            Condition cond = condition_from_name(condition_str);
            Manifest m = generate_dataset(sim_n, cond, seed, out_path, GenOptions{.duration_s = sim_duration});
            std::vector<std::string> outputs{(fs::path(out_path) / "manifest.json").string()};
            for (const auto& it : m.items) {
                outputs.push_back(manifest_item_path(m, it.mixture));
                outputs.push_back(manifest_item_path(m, it.target));
                if (!it.interference.empty()) outputs.push_back(manifest_item_path(m, it.interference));
                outputs.push_back(manifest_item_path(m, it.reference));
            }
            nlohmann::json cfg{{"n", sim_n}, {"condition", condition_str}, {"duration", sim_duration}};
            write_run_json((fs::path(out_path) / "run.json").string(), "simulate", args, cfg, seed, outputs);
            std::cout << "wrote " << m.items.size() << " items to " << out_path << "\n";
            return 0;
        }

        if (train_mask->parsed() || train_flow->parsed()) {
            require_input(data_path, "manifest");
            PipelineConfig pcfg = load_pipeline_config(config_path);
            TrainSetup setup;
            setup.train = pcfg.train;
            setup.train.stage = train_mask->parsed() ? Stage::mask : Stage::flow;
            setup.train.seed = seed;
            if (max_steps >= 0) setup.train.max_steps = max_steps;
            if (train_flow->parsed()) setup.train.prior = prior_from_name(prior_str);
            setup.frontend = pcfg.frontend;
            setup.embed = pcfg.embed;
            setup.mask = pcfg.mask;
            setup.dit = pcfg.dit;
            setup.mask_checkpoint = mask_path;
            Manifest manifest = load_manifest(data_path);
            TrainResult r = train_stage(setup, manifest, out_path);
            nlohmann::json cfg;
            cfg["pipeline"] = pcfg;
            cfg["stage"] = stage_name(setup.train.stage);
            write_run_json(out_path + ".run.json", train_mask->parsed() ? "train-mask" : "train-flow", args,
                           cfg, seed, {out_path, r.log_path});
            std::cout << "trained " << r.steps_run << " steps";
            if (r.stopped_early) std::cout << " (converged early)";
            if (r.aborted_non_finite) std::cout << " (aborted on non-finite loss)";
            if (std::isfinite(r.final_holdout)) std::cout << ", held-out loss " << r.final_holdout;
            std::cout << ", checkpoint " << out_path << "\n";
            return r.aborted_non_finite ? 2 : 0;
        }

        if (infer->parsed()) {
            if (infer_format != "m2f" && infer_format != "csv")
                throw std::invalid_argument("infer: --format must be m2f or csv");
            fs::create_directories(out_path);
            InferOutputs io = run_inference(data_path, mask_path, flow_path, prior_from_name(prior_str),
                                            steps, seed);
            auto save_mat = [&](const std::string& base, const Mat& m) {
                if (infer_format == "csv") {
                    std::ofstream f(base + ".csv");
                    f.precision(9);
                    for (int r = 0; r < m.rows; ++r) {
                        for (int c = 0; c < m.cols; ++c) f << (c ? "," : "") << m.at(r, c);
                        f << "\n";
                    }
                    return base + ".csv";
                }
                save_matrix(base + ".m2f", m);
                return base + ".m2f";
            };
            std::vector<std::string> outputs;
            for (size_t i = 0; i < io.items.size(); ++i) {
                char id[16];
                std::snprintf(id, sizeof(id), "%04d", io.items[i].id);
                const std::string base = (fs::path(out_path) / (std::string("item_") + id)).string();
                outputs.push_back(save_mat(base + "_yhat", io.results[i].y_hat.frames));
                if (io.have_mask) {
                    outputs.push_back(save_mat(base + "_xenh", io.results[i].x_enh));
                }
                if (emit_trajectory) {
                    for (size_t k = 0; k < io.results[i].trajectory.size(); ++k)
                        outputs.push_back(save_mat(base + "_state" + std::to_string(k), io.results[i].trajectory[k]));
                }
            }
            nlohmann::json cfg{{"prior", prior_str}, {"steps", steps}};
            write_run_json((fs::path(out_path) / "run.json").string(), "infer", args, cfg, seed, outputs);
            std::cout << "inferred " << io.items.size() << " items to " << out_path << "\n";
            return 0;
        }

        if (analyze->parsed()) {
            fs::create_directories(out_path);
            const PriorKind prior = prior_from_name(prior_str);
            InferOutputs io = run_inference(data_path, mask_path, flow_path, prior, steps, seed);
            Manifest manifest = load_manifest(data_path);

            // linear-domain views
            std::vector<Mat> lin_x, lin_y, lin_enh, lin_yhat;
            for (size_t i = 0; i < io.items.size(); ++i) {
                lin_x.push_back(to_linear_mel(io.items[i].x_log));
                lin_y.push_back(to_linear_mel(io.items[i].y_log));
                lin_yhat.push_back(to_linear_mel(io.results[i].y_hat.frames));
                if (io.have_mask) lin_enh.push_back(to_linear_mel(io.results[i].x_enh));
            }
            const std::string cond = manifest.condition;
            std::vector<StagePairBatch> batches;
            auto pairs = [&](const std::vector<Mat>& a, const std::vector<Mat>& b) {
                std::vector<std::pair<const Mat*, const Mat*>> p;
                for (size_t i = 0; i < a.size(); ++i) p.push_back({&a[i], &b[i]});
                return p;
            };
            if (io.have_mask) {
                batches.push_back({"Mixture->Masked", cond, pairs(lin_x, lin_enh)});
                batches.push_back({"Masked->Mask2Flow", cond, pairs(lin_enh, lin_yhat)});
                batches.push_back({"Mixture->Mask2Flow", cond, pairs(lin_x, lin_yhat)});
            } else {
                batches.push_back({"Mixture->Flow", cond, pairs(lin_x, lin_yhat)});
            }
            batches.push_back({"Mixture->Target", cond, pairs(lin_x, lin_y)});
            auto table = di_stage_table(batches);

            // cumulative per-step profile averaged over items
            std::vector<DIReport> per_step;
            for (int k = 1; k <= steps; ++k) {
                DIReport agg;
                agg.stage_label = "step";
                agg.condition = cond;
                agg.step_index = k;
                agg.n_items = static_cast<int>(io.items.size());
                for (size_t i = 0; i < io.items.size(); ++i) {
                    auto reports = di_per_step(io.results[i].trajectory, io.items[i].x_log);
                    agg.delete_energy += reports[k - 1].delete_energy;
                    agg.insert_energy += reports[k - 1].insert_energy;
                }
                agg.delete_energy /= agg.n_items;
                agg.insert_energy /= agg.n_items;
                detail::finish_report(agg);
                per_step.push_back(agg);
            }

            const std::string table_csv = (fs::path(out_path) / "stage_table.csv").string();
            const std::string step_csv = (fs::path(out_path) / "per_step.csv").string();
            std::ofstream(table_csv) << di_reports_csv(table);
            std::ofstream(step_csv) << di_reports_csv(per_step);
            std::ofstream((fs::path(out_path) / "di.json").string())
                << nlohmann::json{{"stage_table", di_reports_json(table)},
                                  {"per_step", di_reports_json(per_step)}}
                       .dump(2)
                << "\n";
            nlohmann::json cfg{{"prior", prior_str}, {"steps", steps}};
            write_run_json((fs::path(out_path) / "run.json").string(), "analyze-di", args, cfg, seed,
                           {table_csv, step_csv});
            std::cout << di_reports_csv(table);
            return 0;
        }

        if (eval->parsed()) {
            const PriorKind prior = prior_from_name(prior_str);
            InferOutputs io = run_inference(data_path, mask_path, flow_path, prior, steps, seed);
            EvalReport report;
            for (size_t i = 0; i < io.items.size(); ++i) {
                EvalItemReport item;
                item.id = io.items[i].id;
                MelMetrics mm = mel_metrics(io.results[i].y_hat.frames, io.items[i].y_log);
                item.mel_mse = mm.mel_mse;
                item.log_spectral_distance = mm.log_spectral_distance;
                MelSpectrogram ref_mel = log_mel(io.items[i].reference, io.flow.frontend);
                item.speaker_cosine = cosine_similarity(embed_from_mel(ref_mel, io.flow.embed),
                                                        embed_from_mel(io.results[i].y_hat, io.flow.embed));
                report.items.push_back(item);
            }
            // per-item RTF from a short timing pass (model only)
            RtfResult rtf = bench_rtf(io.items, io.have_mask ? &io.mask.params : nullptr, &io.flow.params,
                                      FlowPrior{prior, 1.0}, steps, BenchMode::mask_and_flow, 3, 1);
            for (auto& it : report.items) it.rtf = rtf.median;
            report.aggregate();
            std::ofstream(out_path) << eval_report_json(report).dump(2) << "\n";
            nlohmann::json cfg{{"prior", prior_str}, {"steps", steps}};
            write_run_json(out_path + ".run.json", "eval", args, cfg, seed, {out_path});
            std::cout << "mel_mse " << report.mel_mse << "  lsd " << report.log_spectral_distance
                      << "  spk_cos " << report.speaker_cosine << "  rtf " << report.rtf << "\n";
            return 0;
        }

        if (bench->parsed()) {
            require_input(data_path, "manifest");
            const PriorKind prior = prior_from_name(prior_str);
            LoadedMaskModel mask_model;
            LoadedFlowModel flow_model;
            MaskNetParams<float>* mp = nullptr;
            DiTParams<float>* fp = nullptr;
            FrontendConfig frontend;
            EmbedConfig embed_cfg;
            if (!mask_path.empty()) {
                mask_model = load_mask_model(mask_path);
                mp = &mask_model.params;
                frontend = mask_model.frontend;
                embed_cfg = mask_model.embed;
            }
            if (!flow_path.empty()) {
                flow_model = load_flow_model(flow_path);
                fp = &flow_model.params;
                frontend = flow_model.frontend;
                embed_cfg = flow_model.embed;
            }
            if (!mp && !fp) throw std::invalid_argument("bench-rtf: need --mask and/or --flow");
            Manifest manifest = load_manifest(data_path);
            auto items = load_items(manifest, frontend, embed_cfg);
            const BenchMode mode = bench_mode == "mask-only" ? BenchMode::mask_only : BenchMode::mask_and_flow;
            RtfResult r = bench_rtf(items, mp, fp, FlowPrior{prior, 1.0}, steps, mode, repeats, warmup);
            nlohmann::json j{{"mode", bench_mode}, {"steps", steps},   {"median", r.median},
                             {"p90", r.p90},       {"repeats", r.per_repeat}};
            std::ofstream(out_path) << j.dump(2) << "\n";
            nlohmann::json cfg{{"mode", bench_mode}, {"steps", steps}, {"repeats", repeats}};
            write_run_json(out_path + ".run.json", "bench-rtf", args, cfg, seed, {out_path});
            std::cout << "rtf median " << r.median << "  p90 " << r.p90 << "\n";
            return 0;
        }

        throw std::invalid_argument("no subcommand given");
    } catch (const std::invalid_argument& e) {
        if (json_errors)
            std::cerr << nlohmann::json{{"error", e.what()}, {"exit_code", 1}}.dump() << "\n";
        else
            std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        if (json_errors)
            std::cerr << nlohmann::json{{"error", e.what()}, {"exit_code", 2}}.dump() << "\n";
        else
            std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace m2f::cli
