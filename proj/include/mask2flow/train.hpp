#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mask2flow/checkpoint.hpp"
#include "mask2flow/config.hpp"
#include "mask2flow/data.hpp"
#include "mask2flow/flow.hpp"
#include "mask2flow/optim.hpp"

// Sequential two-stage training. The mask stage minimizes the masked
// reconstruction error; the flow stage freezes the mask (EMA weights) and
// regresses the constant trajectory velocity. Gradient accumulation uses
// loss-mean semantics: micro-batch losses are means, accumulated gradients
// are divided by the number of micro-batches before the AdamW step.

namespace m2f {

struct TrainSetup {
    TrainConfig train;
    FrontendConfig frontend{.mel_bands = 40};
    EmbedConfig embed;
    MaskNetConfig mask;          // mask stage
    DiTConfig dit;               // flow stage
    std::string mask_checkpoint; // flow stage with masked prior
};

struct TrainLogRow {
    int step = 0;
    double loss = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double final_holdout = std::numeric_limits<double>::quiet_NaN();
    int steps_run = 0;
    bool aborted_non_finite = false;
    bool stopped_early = false;
    std::string checkpoint_path;
    std::string log_path;
};

struct LoadedMaskModel {
    MaskNetConfig cfg;
    FrontendConfig frontend;
    EmbedConfig embed;
    MaskNetParams<float> params;
};

struct LoadedFlowModel {
    DiTConfig cfg;
    FrontendConfig frontend;
    EmbedConfig embed;
    PriorKind prior = PriorKind::masked;
    DiTParams<float> params;
};

inline LoadedMaskModel load_mask_model(const std::string& path, bool use_ema = true) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    if (ckpt.kind != "mask")
        throw std::runtime_error("load_mask_model: '" + path + "' holds a '" + ckpt.kind + "' checkpoint");
    LoadedMaskModel m;
    m.cfg = ckpt.config.at("mask").get<MaskNetConfig>();
    m.frontend = ckpt.config.at("frontend").get<FrontendConfig>();
    m.embed = ckpt.config.at("embed").get<EmbedConfig>();
    m.params = MaskNetParams<float>::init(m.cfg, 0);
    load_model_params(ckpt, m.params.refs(), use_ema);
    return m;
}

inline LoadedFlowModel load_flow_model(const std::string& path, bool use_ema = true) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    if (ckpt.kind != "dit")
        throw std::runtime_error("load_flow_model: '" + path + "' holds a '" + ckpt.kind + "' checkpoint");
    LoadedFlowModel m;
    m.cfg = ckpt.config.at("dit").get<DiTConfig>();
    m.frontend = ckpt.config.at("frontend").get<FrontendConfig>();
    m.embed = ckpt.config.at("embed").get<EmbedConfig>();
    if (ckpt.config.contains("train"))
        m.prior = ckpt.config.at("train").get<TrainConfig>().prior;
    m.params = DiTParams<float>::init(m.cfg, 0);
    load_model_params(ckpt, m.params.refs(), use_ema);
    return m;
}

namespace detail {

struct TrainItemFeatures {
    Mat x_log, y_log;
    int speaker = -1;
    uint64_t seed = 0;
    // per-pool-entry conditioning (reference resampling draws from this pool)
    std::vector<SpeakerEmbedding> d_pool;
    std::vector<Mat> x_enh_pool;  // flow stage only
};

inline Tensor<float> to_tensor(const Mat& m) { return Tensor<float>::from_data({m.rows, m.cols}, m.v); }

inline Tensor<float> embed_tensor(const SpeakerEmbedding& d) {
    return Tensor<float>::from_data({1, d.dim()}, d.vector);
}

}  // namespace detail

inline TrainResult train_stage(const TrainSetup& setup, const Manifest& manifest,
                               const std::string& out_checkpoint) {
    TrainConfig cfg = setup.train;
    cfg.validate();
    const bool is_mask = cfg.stage == Stage::mask;

    // reference pool size: epoch-resampled references are drawn from a small
    // precomputed pool so per-epoch cost stays flat
    const int pool_size = cfg.resample_reference ? 4 : 1;

    // frozen mask for the flow stage
    LoadedMaskModel frozen_mask;
    bool have_mask = false;
    if (!is_mask && cfg.prior == PriorKind::masked) {
        if (setup.mask_checkpoint.empty())
            throw std::invalid_argument("train_stage: flow stage with masked prior needs a mask checkpoint");
        frozen_mask = load_mask_model(setup.mask_checkpoint, /*use_ema=*/true);
        have_mask = true;
    }

    // ---- data ----
    std::vector<DataItem> raw = load_items(manifest, setup.frontend, setup.embed, cfg.chunk_seconds);
    if (raw.empty()) throw std::invalid_argument("train_stage: empty dataset");
    int holdout_n = 0;
    if (raw.size() >= 2 && cfg.holdout_fraction > 0)
        holdout_n = std::max(1, static_cast<int>(std::lround(cfg.holdout_fraction * raw.size())));
    const int train_n = static_cast<int>(raw.size()) - holdout_n;
    if (train_n < 1) throw std::invalid_argument("train_stage: no training items after holdout split");

    const double ref_seconds = std::max(0.5, cfg.chunk_seconds);
    auto compute_x_enh = [&](const Mat& x_log, const SpeakerEmbedding& d) {
        NormalizedMel norm = l2_normalize(MelSpectrogram{x_log, setup.frontend});
        Tensor<float> m = mask_forward<float>(nullptr, detail::to_tensor(norm.spec.frames),
                                              detail::embed_tensor(d), frozen_mask.params, false);
        return apply_mask(x_log, tensor_to_grid(m));
    };

    std::vector<detail::TrainItemFeatures> items(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        items[i].x_log = raw[i].x_log;
        items[i].y_log = raw[i].y_log;
        items[i].speaker = raw[i].target_speaker;
        items[i].seed = raw[i].seed;
        items[i].d_pool.push_back(raw[i].d);
        if (items[i].speaker >= 0) {
            const SyntheticSpeaker spk = SyntheticSpeaker::from_id(items[i].speaker);
            for (int p = 1; p < pool_size; ++p) {
                auto ref = synth_utterance(spk, ref_seconds, items[i].seed ^ (0x9e3779b9ull * p),
                                           setup.frontend.sample_rate);
                items[i].d_pool.push_back(embed(ref, setup.frontend.sample_rate, setup.embed));
            }
        }
        if (!is_mask && have_mask)
            for (const auto& d : items[i].d_pool) items[i].x_enh_pool.push_back(compute_x_enh(items[i].x_log, d));
    }

    // ---- model ----
    nlohmann::json config_json;
    config_json["version"] = kConfigSchemaVersion;
    config_json["stage"] = stage_name(cfg.stage);
    config_json["train"] = cfg;
    config_json["frontend"] = setup.frontend;
    config_json["embed"] = setup.embed;

    MaskNetParams<float> mask_params;
    DiTParams<float> dit_params;
    std::vector<ParamRef<float>> refs;
    if (is_mask) {
        mask_params = MaskNetParams<float>::init(setup.mask, cfg.seed);
        refs = mask_params.refs();
        config_json["mask"] = setup.mask;
    } else {
        dit_params = DiTParams<float>::init(setup.dit, cfg.seed);
        refs = dit_params.refs();
        config_json["dit"] = setup.dit;
        if (have_mask) config_json["mask_checkpoint"] = setup.mask_checkpoint;
    }
    set_requires_grad(refs, true);

    AdamW<float> optimizer(refs);
    EmaState<float> ema = EmaState<float>::init(refs);
    Rng rng(cfg.seed ^ 0x7ea12ull);

    TrainResult result;
    result.checkpoint_path = out_checkpoint;
    result.log_path = out_checkpoint + ".log.csv";

    auto pool_index = [&](size_t item, int epoch) {
        return static_cast<size_t>(fnv1a64(&item, sizeof(item), 0x9e3779b97f4a7c15ull ^ epoch) %
                                   items[item].d_pool.size());
    };

    // one item's loss on the tape
    auto item_loss = [&](Tape<float>* tape, detail::TrainItemFeatures& it, size_t pool, Rng& draw,
                         bool train_mode) {
        Tensor<float> d_t = detail::embed_tensor(it.d_pool[pool]);
        if (is_mask) {
            NormalizedMel norm = l2_normalize(MelSpectrogram{it.x_log, setup.frontend});
            Tensor<float> x_norm = detail::to_tensor(norm.spec.frames);
            Tensor<float> x_log = detail::to_tensor(it.x_log);
            Tensor<float> y = detail::to_tensor(it.y_log);
            Tensor<float> m = mask_forward(tape, x_norm, d_t, mask_params, train_mode);
            return mask_loss(tape, apply_mask(tape, x_log, m), y);
        }
        const Mat* x_enh = it.x_enh_pool.empty() ? nullptr : &it.x_enh_pool[pool % it.x_enh_pool.size()];
        FlowPrior prior{cfg.prior, 1.0};
        const double t = draw.uniform();
        FlowSample<float> s = make_trajectory_sample(prior, it.x_log, x_enh, it.y_log, t, draw);
        const Mat& cond = cfg.prior == PriorKind::masked ? *x_enh : it.x_log;
        Tensor<float> v = velocity_forward(tape, detail::to_tensor(s.x_t), detail::to_tensor(cond), t, d_t,
                                           dit_params);
        return flow_loss(tape, v, detail::to_tensor(s.u));
    };

    auto holdout_loss = [&]() {
        if (holdout_n == 0) return std::numeric_limits<double>::quiet_NaN();
        double acc = 0;
        int count = 0;
        for (int i = train_n; i < static_cast<int>(items.size()); ++i) {
            auto& it = items[i];
            if (is_mask) {
                Rng unused(0);
                acc += item_loss(nullptr, it, 0, unused, /*train_mode=*/false).item();
                ++count;
            } else {
                for (double t : {0.25, 0.5, 0.75}) {
                    Rng det(it.seed ^ 0x401d0c7ull);
                    const Mat* x_enh = it.x_enh_pool.empty() ? nullptr : &it.x_enh_pool[0];
                    FlowSample<float> s = make_trajectory_sample(FlowPrior{cfg.prior, 1.0}, it.x_log, x_enh,
                                                                 it.y_log, t, det);
                    const Mat& cond = cfg.prior == PriorKind::masked ? *x_enh : it.x_log;
                    Tensor<float> v = velocity_forward<float>(nullptr, detail::to_tensor(s.x_t),
                                                              detail::to_tensor(cond), t,
                                                              detail::embed_tensor(it.d_pool[0]), dit_params);
                    acc += flow_loss<float>(nullptr, v, detail::to_tensor(s.u)).item();
                    ++count;
                }
            }
        }
        return acc / std::max(1, count);
    };

    auto save = [&](const std::string& path) {
        save_model_checkpoint(path, is_mask ? "mask" : "dit", config_json, refs, ema.shadow(),
                              nlohmann::json{{"steps_run", result.steps_run},
                                             {"aborted_non_finite", result.aborted_non_finite},
                                             {"stopped_early", result.stopped_early}});
    };

    // ---- loop ----
    std::vector<int> order(train_n);
    for (int i = 0; i < train_n; ++i) order[i] = i;
    int cursor = train_n;  // forces a shuffle on first use
    int epoch = -1;

    auto next_item = [&]() {
        if (cursor >= train_n) {
            ++epoch;
            for (int i = train_n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    double best_holdout = std::numeric_limits<double>::infinity();
    int last_improve_step = 0;
    const int stall_window = std::max(1, static_cast<int>(0.2 * cfg.max_steps));

    // rolling last-good state (params, buffers, EMA) restored on a blow-up
    auto take_snapshot = [&]() {
        std::vector<std::vector<float>> snap;
        for (const auto& r : refs) snap.emplace_back(r.tensor->data().begin(), r.tensor->data().end());
        for (const auto& t : ema.shadow()) snap.emplace_back(t.data().begin(), t.data().end());
        return snap;
    };
    auto params_finite = [&]() {
        for (const auto& r : refs)
            for (float v : r.tensor->data())
                if (!std::isfinite(v)) return false;
        return true;
    };
    std::vector<std::vector<float>> last_good = take_snapshot();
    auto restore_snapshot = [&]() {
        size_t k = 0;
        for (const auto& r : refs) {
            std::copy(last_good[k].begin(), last_good[k].end(), r.tensor->data().begin());
            ++k;
        }
        for (const auto& t : ema.shadow()) {
            std::copy(last_good[k].begin(), last_good[k].end(),
                      const_cast<Tensor<float>&>(t).data().begin());
            ++k;
        }
    };

    zero_grads(refs);
    for (int step = 0; step < cfg.max_steps; ++step) {
        double step_loss = 0;
        bool failed = false;
        try {
            for (int micro = 0; micro < cfg.grad_accum; ++micro) {
                Tape<float> tape;
                Tensor<float> total;
                for (int b = 0; b < cfg.batch_size; ++b) {
                    const int idx = next_item();
                    const size_t pool = pool_index(idx, epoch);
                    Tensor<float> l = item_loss(&tape, items[idx], pool, rng, /*train_mode=*/true);
                    total = b == 0 ? l : add(&tape, total, l);
                }
                Tensor<float> loss = scale(&tape, total, 1.0 / cfg.batch_size);
                step_loss += loss.item();
                tape.backward(loss);
            }
            if (cfg.grad_accum > 1) {
                const float inv = 1.0f / cfg.grad_accum;
                for (auto& r : refs)
                    if (r.trainable)
                        for (auto& g : r.tensor->grad()) g *= inv;
            }
            if (cfg.grad_clip > 0.0) {
                double norm2 = 0;
                for (auto& r : refs)
                    if (r.trainable)
                        for (float g : r.tensor->grad()) norm2 += static_cast<double>(g) * g;
                const double norm = std::sqrt(norm2);
                if (norm > cfg.grad_clip) {
                    const float sc = static_cast<float>(cfg.grad_clip / norm);
                    for (auto& r : refs)
                        if (r.trainable)
                            for (auto& g : r.tensor->grad()) g *= sc;
                }
            }
            const double lr_t = lr_schedule(step, cfg.lr, cfg.warmup_steps);
            optimizer.step(refs, lr_t, cfg.weight_decay);
            ema.update(refs, cfg.ema_decay);
            zero_grads(refs);
            if (!params_finite()) failed = true;
            if (!failed) result.log.push_back({step + 1, step_loss / cfg.grad_accum, lr_t});
        } catch (const std::runtime_error&) {
            // non-finite loss or gradient: stop and keep the last good weights
            failed = true;
        }
        if (failed) {
            result.aborted_non_finite = true;
            restore_snapshot();
            break;
        }
        result.steps_run = step + 1;
        last_good = take_snapshot();

        const bool eval_now = cfg.eval_interval > 0 && ((step + 1) % cfg.eval_interval == 0);
        if (eval_now && holdout_n > 0) {
            const double h = holdout_loss();
            if (h < 0.99 * best_holdout) {
                best_holdout = h;
                last_improve_step = step + 1;
            } else if (cfg.early_stop && (step + 1) - last_improve_step >= stall_window) {
                result.stopped_early = true;
                break;
            }
        }
        if (cfg.save_interval > 0 && (step + 1) % cfg.save_interval == 0) save(out_checkpoint);
    }

    if (!result.aborted_non_finite) {
        result.final_holdout = holdout_loss();
    }
    save(out_checkpoint);

    std::ofstream log_file(result.log_path);
    if (!log_file) throw std::runtime_error("train_stage: cannot write " + result.log_path);
    log_file << "step,loss,lr\n";
    log_file.precision(10);
    for (const auto& row : result.log) log_file << row.step << "," << row.loss << "," << row.lr << "\n";
    return result;
}

}  // namespace m2f
