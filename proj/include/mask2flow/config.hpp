#pragma once

#include <string>

#include <json.hpp>

#include "mask2flow/dit.hpp"
#include "mask2flow/dsp.hpp"
#include "mask2flow/flow.hpp"
#include "mask2flow/masknet.hpp"
#include "mask2flow/mixture.hpp"
#include "mask2flow/speaker.hpp"

// JSON (de)serialization for every user-facing config. The schema is
// versioned; unknown keys are rejected nowhere (forward compatibility), but
// every known key overrides the built-in default.

namespace m2f {

inline constexpr int kConfigSchemaVersion = 1;

namespace detail {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const FrontendConfig& c) {
    j = nlohmann::json{{"sample_rate", c.sample_rate}, {"fft_size", c.fft_size},   {"hop", c.hop},
                       {"mel_bands", c.mel_bands},     {"fmin", c.fmin},           {"fmax", c.fmax},
                       {"log_floor", c.log_floor},     {"whisper_clamp", c.whisper_clamp}};
}

inline void from_json(const nlohmann::json& j, FrontendConfig& c) {
    detail::get_if(j, "sample_rate", c.sample_rate);
    detail::get_if(j, "fft_size", c.fft_size);
    detail::get_if(j, "hop", c.hop);
    detail::get_if(j, "mel_bands", c.mel_bands);
    detail::get_if(j, "fmin", c.fmin);
    detail::get_if(j, "fmax", c.fmax);
    detail::get_if(j, "log_floor", c.log_floor);
    detail::get_if(j, "whisper_clamp", c.whisper_clamp);
}

inline void to_json(nlohmann::json& j, const EmbedConfig& c) {
    j = nlohmann::json{{"embed_dim", c.embed_dim},
                       {"mel_bands", c.mel_bands},
                       {"f0_bins", c.f0_bins},
                       {"f0_min", c.f0_min},
                       {"f0_max", c.f0_max},
                       {"voicing_threshold", c.voicing_threshold},
                       {"f0_feature_weight", c.f0_feature_weight},
                       {"spectral_fmax", c.spectral_fmax}};
}

inline void from_json(const nlohmann::json& j, EmbedConfig& c) {
    detail::get_if(j, "embed_dim", c.embed_dim);
    detail::get_if(j, "mel_bands", c.mel_bands);
    detail::get_if(j, "f0_bins", c.f0_bins);
    detail::get_if(j, "f0_min", c.f0_min);
    detail::get_if(j, "f0_max", c.f0_max);
    detail::get_if(j, "voicing_threshold", c.voicing_threshold);
    detail::get_if(j, "f0_feature_weight", c.f0_feature_weight);
    detail::get_if(j, "spectral_fmax", c.spectral_fmax);
}

inline void to_json(nlohmann::json& j, const MaskNetConfig& c) {
    j = nlohmann::json{{"conv_layers", c.conv_layers}, {"conv_channels", c.conv_channels},
                       {"lstm_layers", c.lstm_layers}, {"lstm_hidden", c.lstm_hidden},
                       {"embed_dim", c.embed_dim},     {"mel_bands", c.mel_bands},
                       {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, MaskNetConfig& c) {
    detail::get_if(j, "conv_layers", c.conv_layers);
    detail::get_if(j, "conv_channels", c.conv_channels);
    detail::get_if(j, "lstm_layers", c.lstm_layers);
    detail::get_if(j, "lstm_hidden", c.lstm_hidden);
    detail::get_if(j, "embed_dim", c.embed_dim);
    detail::get_if(j, "mel_bands", c.mel_bands);
    detail::get_if(j, "leaky_slope", c.leaky_slope);
}

inline void to_json(nlohmann::json& j, const DiTConfig& c) {
    j = nlohmann::json{{"blocks", c.blocks},       {"hidden", c.hidden},
                       {"heads", c.heads},         {"mel_bands", c.mel_bands},
                       {"embed_dim", c.embed_dim}, {"mlp_ratio", c.mlp_ratio},
                       {"cond_dim", c.cond_dim},   {"time_freqs", c.time_freqs},
                       {"rope_base", c.rope_base}};
}

inline void from_json(const nlohmann::json& j, DiTConfig& c) {
    detail::get_if(j, "blocks", c.blocks);
    detail::get_if(j, "hidden", c.hidden);
    detail::get_if(j, "heads", c.heads);
    detail::get_if(j, "mel_bands", c.mel_bands);
    detail::get_if(j, "embed_dim", c.embed_dim);
    detail::get_if(j, "mlp_ratio", c.mlp_ratio);
    detail::get_if(j, "cond_dim", c.cond_dim);
    detail::get_if(j, "time_freqs", c.time_freqs);
    detail::get_if(j, "rope_base", c.rope_base);
}

enum class Stage { mask, flow };

inline std::string stage_name(Stage s) { return s == Stage::mask ? "mask" : "flow"; }

struct TrainConfig {
    Stage stage = Stage::mask;
    double lr = 2e-4;
    int warmup_steps = 200;  // 10000 at full scale
    int batch_size = 4;      // 10 at full scale
    int grad_accum = 2;
    double ema_decay = 0.99;  // 0.9999 at full scale
    int max_steps = 1000;
    uint64_t seed = 1;
    double chunk_seconds = 2.0;  // 10 at full scale
    double weight_decay = 0.01;  // unstated in the source; conventional default
    double grad_clip = 1.0;      // global-norm clip; 0 disables
    PriorKind prior = PriorKind::masked;
    double holdout_fraction = 0.1;
    int save_interval = 0;  // steps between periodic checkpoints; 0 = final only
    int eval_interval = 50;
    bool resample_reference = true;
    bool early_stop = true;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
        if (!(ema_decay > 0 && ema_decay < 1)) throw std::invalid_argument("TrainConfig: ema_decay in (0,1)");
        if (grad_accum < 1) throw std::invalid_argument("TrainConfig: grad_accum >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
        if (max_steps < 0) throw std::invalid_argument("TrainConfig: max_steps >= 0");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"stage", stage_name(c.stage)},
                       {"lr", c.lr},
                       {"warmup_steps", c.warmup_steps},
                       {"batch_size", c.batch_size},
                       {"grad_accum", c.grad_accum},
                       {"ema_decay", c.ema_decay},
                       {"max_steps", c.max_steps},
                       {"seed", c.seed},
                       {"chunk_seconds", c.chunk_seconds},
                       {"weight_decay", c.weight_decay},
                       {"grad_clip", c.grad_clip},
                       {"prior", prior_name(c.prior)},
                       {"holdout_fraction", c.holdout_fraction},
                       {"save_interval", c.save_interval},
                       {"eval_interval", c.eval_interval},
                       {"resample_reference", c.resample_reference},
                       {"early_stop", c.early_stop}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("stage")) c.stage = j.at("stage").get<std::string>() == "flow" ? Stage::flow : Stage::mask;
    detail::get_if(j, "lr", c.lr);
    detail::get_if(j, "warmup_steps", c.warmup_steps);
    detail::get_if(j, "batch_size", c.batch_size);
    detail::get_if(j, "grad_accum", c.grad_accum);
    detail::get_if(j, "ema_decay", c.ema_decay);
    detail::get_if(j, "max_steps", c.max_steps);
    detail::get_if(j, "seed", c.seed);
    detail::get_if(j, "chunk_seconds", c.chunk_seconds);
    detail::get_if(j, "weight_decay", c.weight_decay);
    detail::get_if(j, "grad_clip", c.grad_clip);
    if (j.contains("prior")) c.prior = prior_from_name(j.at("prior").get<std::string>());
    detail::get_if(j, "holdout_fraction", c.holdout_fraction);
    detail::get_if(j, "save_interval", c.save_interval);
    detail::get_if(j, "eval_interval", c.eval_interval);
    detail::get_if(j, "resample_reference", c.resample_reference);
    detail::get_if(j, "early_stop", c.early_stop);
}

// Top-level config file: {"version":1, "frontend":{...}, "embed":{...},
// "mask":{...}, "dit":{...}, "train":{...}} — all sections optional.
struct PipelineConfig {
    FrontendConfig frontend{.mel_bands = 40};
    EmbedConfig embed;
    MaskNetConfig mask;
    DiTConfig dit;
    TrainConfig train;
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"version", kConfigSchemaVersion}, {"frontend", c.frontend}, {"embed", c.embed},
                       {"mask", c.mask},                  {"dit", c.dit},           {"train", c.train}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    if (j.contains("version") && j.at("version").get<int>() != kConfigSchemaVersion)
        throw std::invalid_argument("config: unsupported schema version");
    detail::get_if(j, "frontend", c.frontend);
    detail::get_if(j, "embed", c.embed);
    detail::get_if(j, "mask", c.mask);
    detail::get_if(j, "dit", c.dit);
    detail::get_if(j, "train", c.train);
}

}  // namespace m2f
