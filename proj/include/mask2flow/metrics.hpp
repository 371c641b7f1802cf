#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mask2flow/data.hpp"
#include "mask2flow/flow.hpp"

// Mel-domain quality metrics (the desk-scale stand-ins for WER), plus the
// real-time-factor harness. RTF = model inference time / audio duration,
// frontend excluded, batch size 1.

namespace m2f {

struct MelMetrics {
    double mel_mse = 0;
    double log_spectral_distance = 0;
};

inline MelMetrics mel_metrics(const Mat& y_hat, const Mat& y) {
    require_same_shape(y_hat, y, "mel_metrics");
    MelMetrics out;
    double mse = 0;
    double lsd = 0;
    for (int t = 0; t < y.rows; ++t) {
        double frame = 0;
        for (int b = 0; b < y.cols; ++b) {
            const double d = static_cast<double>(y_hat.at(t, b)) - y.at(t, b);
            frame += d * d;
        }
        mse += frame;
        lsd += std::sqrt(frame / y.cols);  // per-frame RMS log-spectral difference
    }
    out.mel_mse = mse / (static_cast<double>(y.rows) * y.cols);
    out.log_spectral_distance = lsd / y.rows;
    return out;
}

struct EvalItemReport {
    int id = 0;
    double mel_mse = 0;
    double log_spectral_distance = 0;
    double speaker_cosine = 0;
    double rtf = 0;
};

struct EvalReport {
    std::vector<EvalItemReport> items;
    double mel_mse = 0;
    double log_spectral_distance = 0;
    double speaker_cosine = 0;
    double rtf = 0;

    void aggregate() {
        mel_mse = log_spectral_distance = speaker_cosine = rtf = 0;
        for (const auto& it : items) {
            mel_mse += it.mel_mse;
            log_spectral_distance += it.log_spectral_distance;
            speaker_cosine += it.speaker_cosine;
            rtf += it.rtf;
        }
        const double n = std::max<size_t>(1, items.size());
        mel_mse /= n;
        log_spectral_distance /= n;
        speaker_cosine /= n;
        rtf /= n;
    }
};

inline nlohmann::json eval_report_json(const EvalReport& r) {
    nlohmann::json j;
    j["aggregate"] = {{"mel_mse", r.mel_mse},
                      {"log_spectral_distance", r.log_spectral_distance},
                      {"speaker_cosine", r.speaker_cosine},
                      {"rtf", r.rtf}};
    j["items"] = nlohmann::json::array();
    for (const auto& it : r.items) {
        j["items"].push_back({{"id", it.id},
                              {"mel_mse", it.mel_mse},
                              {"log_spectral_distance", it.log_spectral_distance},
                              {"speaker_cosine", it.speaker_cosine},
                              {"rtf", it.rtf}});
    }
    return j;
}

enum class BenchMode { mask_only, mask_and_flow };

struct RtfResult {
    double median = 0;
    double p90 = 0;
    std::vector<double> per_repeat;
};

// Times only the model forward passes over precomputed features, one item at
// a time. Warm-up repeats are excluded.
inline RtfResult bench_rtf(std::vector<DataItem>& items, MaskNetParams<float>* mask_params,
                           DiTParams<float>* flow_params, const FlowPrior& prior, int steps,
                           BenchMode mode, int repeats = 5, int warmup = 3) {
    if (items.empty()) throw std::invalid_argument("bench_rtf: no items");
    if (mode == BenchMode::mask_and_flow && !flow_params)
        throw std::invalid_argument("bench_rtf: flow benchmark needs a flow checkpoint");
    if ((mode == BenchMode::mask_only || prior.kind == PriorKind::masked) && !mask_params)
        throw std::invalid_argument("bench_rtf: mask benchmark needs a mask checkpoint");

    double total_audio = 0;
    for (const auto& it : items) total_audio += it.duration_s;
    if (total_audio <= 0) throw std::invalid_argument("bench_rtf: zero audio duration");

    auto run_item = [&](DataItem& it) {
        Tensor<float> d_t = Tensor<float>::from_data({1, it.d.dim()}, it.d.vector);
        Mat x_enh;
        if (mask_params) {
            NormalizedMel norm = l2_normalize(MelSpectrogram{it.x_log, FrontendConfig{}});
            Tensor<float> m = mask_forward<float>(nullptr, grid_to_tensor(norm.spec.frames), d_t,
                                                  *mask_params, false);
            x_enh = apply_mask(it.x_log, tensor_to_grid(m));
        }
        if (mode == BenchMode::mask_only) return;
        const Mat& x0 = prior.kind == PriorKind::masked ? x_enh : it.x_log;
        const Mat& cond = prior.kind == PriorKind::masked ? x_enh : it.x_log;
        Tensor<float> cond_t = grid_to_tensor(cond);
        VelocityFn<float> vfn = [&](const Mat& x, double t) {
            return tensor_to_grid(velocity_forward<float>(nullptr, grid_to_tensor(x), cond_t, t, d_t, *flow_params));
        };
        (void)euler_integrate(x0, steps, vfn);
    };

    RtfResult out;
    for (int rep = 0; rep < warmup + repeats; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        for (auto& it : items) run_item(it);
        const auto stop = std::chrono::steady_clock::now();
        const double sec = std::chrono::duration<double>(stop - start).count();
        if (rep >= warmup) out.per_repeat.push_back(sec / total_audio);
    }
    std::vector<double> sorted = out.per_repeat;
    std::sort(sorted.begin(), sorted.end());
    out.median = sorted[sorted.size() / 2];
    out.p90 = sorted[std::min(sorted.size() - 1, static_cast<size_t>(std::ceil(0.9 * sorted.size())) - 1)];
    return out;
}

}  // namespace m2f
