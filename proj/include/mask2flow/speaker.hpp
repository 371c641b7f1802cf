#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mask2flow/dsp.hpp"
#include "mask2flow/rng.hpp"

// Deterministic toy speaker encoder. Features: CMN'd long-term average
// log-mel spectrum plus a 16-bin log-spaced f0 histogram from normalized
// autocorrelation, pushed through a fixed seeded random projection and
// l2-normalized. Stands in for a pretrained encoder; the rest of the
// pipeline treats the vector as opaque conditioning.

namespace m2f {

struct EmbedConfig {
    int embed_dim = 32;   // 512 at full scale
    int mel_bands = 40;   // internal analysis resolution
    int f0_bins = 16;
    double f0_min = 70.0;
    double f0_max = 400.0;
    double voicing_threshold = 0.55;
    double f0_feature_weight = 1.0;
    double spectral_fmax = 4600.0;  // profile bands above this carry no voice content

    bool operator==(const EmbedConfig&) const = default;
};

struct SpeakerEmbedding {
    std::vector<float> vector;  // unit l2 norm
    int dim() const { return static_cast<int>(vector.size()); }
};

namespace detail {

inline std::vector<float> embed_projection_row(const EmbedConfig& cfg, int row, int feat_dim) {
    // fixed global seed; row r of the projection is derived independently so
    // any embed_dim sees a consistent prefix
    Rng rng(0xe3bedd1eull ^ (0x9e3779b97f4a7c15ull * (row + 1)));
    std::vector<float> p(feat_dim);
    double norm = 0;
    for (int i = 0; i < feat_dim; ++i) {
        p[i] = static_cast<float>(rng.normal());
        norm += static_cast<double>(p[i]) * p[i];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm, 1e-12)));
    for (float& x : p) x *= inv;
    return p;
}

inline SpeakerEmbedding project_features(const std::vector<double>& feat, const EmbedConfig& cfg) {
    SpeakerEmbedding e;
    e.vector.resize(cfg.embed_dim);
    double norm = 0;
    for (int r = 0; r < cfg.embed_dim; ++r) {
        const auto row = embed_projection_row(cfg, r, static_cast<int>(feat.size()));
        double acc = 0;
        for (size_t i = 0; i < feat.size(); ++i) acc += row[i] * feat[i];
        e.vector[r] = static_cast<float>(acc);
        norm += acc * acc;
    }
    if (norm < 1e-24) {
        // degenerate (silent) input: fixed unit vector
        e.vector.assign(cfg.embed_dim, 0.0f);
        e.vector[0] = 1.0f;
        return e;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(norm));
    for (float& x : e.vector) x *= inv;
    return e;
}

// Long-term average log-mel, kept below spectral_fmax, detrended with a
// 5-band moving average so formant-local structure dominates over the rolloff
// shape every utterance shares. Unit-normalized; gain-invariant because
// detrending removes the constant log offset.
inline std::vector<double> spectral_profile(const MelSpectrogram& mel, const EmbedConfig& cfg) {
    int keep = mel.bands();
    for (int b = 0; b < mel.bands(); ++b) {
        if (mel_band_center_hz(mel.config, b) > cfg.spectral_fmax) {
            keep = b;
            break;
        }
    }
    keep = std::max(keep, 8);
    std::vector<double> a(keep, 0.0);
    for (int t = 0; t < mel.num_frames(); ++t)
        for (int b = 0; b < keep; ++b) a[b] += mel.frames.at(t, b);
    for (double& x : a) x /= std::max(1, mel.num_frames());

    std::vector<double> d(keep, 0.0);
    for (int b = 0; b < keep; ++b) {
        const int lo = std::max(0, b - 2), hi = std::min(keep - 1, b + 2);
        double avg = 0;
        for (int i = lo; i <= hi; ++i) avg += a[i];
        d[b] = a[b] - avg / (hi - lo + 1);
    }
    double norm = 0;
    for (double x : d) norm += x * x;
    if (norm > 1e-18) {
        const double inv = 1.0 / std::sqrt(norm);
        for (double& x : d) x *= inv;
    }
    d.resize(mel.bands(), 0.0);  // fixed feature width regardless of the cut
    return d;
}

}  // namespace detail

inline SpeakerEmbedding embed(std::span<const float> reference, int sample_rate,
                              const EmbedConfig& cfg = {}) {
    if (reference.size() < static_cast<size_t>(sample_rate / 2))
        throw std::invalid_argument("embed: reference shorter than 0.5 s");

    FrontendConfig fe;
    fe.sample_rate = sample_rate;
    fe.mel_bands = cfg.mel_bands;
    const MelSpectrogram mel = log_mel(reference, fe);
    std::vector<double> feat = detail::spectral_profile(mel, cfg);

    // f0 histogram over voiced frames, log-spaced bins
    std::vector<double> hist(cfg.f0_bins, 0.0);
    const int win = fe.fft_size;
    const int lag_min = std::max(2, static_cast<int>(sample_rate / cfg.f0_max));
    const int lag_max = static_cast<int>(sample_rate / cfg.f0_min);
    double voiced_frames = 0;
    for (int t = 0; t + win + lag_max < static_cast<int>(reference.size()); t += fe.hop) {
        const float* x = reference.data() + t;
        double best_r = 0;
        int best_lag = 0;
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            double num = 0, e0 = 0, e1 = 0;
            for (int i = 0; i < win; ++i) {
                num += static_cast<double>(x[i]) * x[i + lag];
                e0 += static_cast<double>(x[i]) * x[i];
                e1 += static_cast<double>(x[i + lag]) * x[i + lag];
            }
            const double den = std::sqrt(e0 * e1);
            if (den < 1e-12) continue;
            const double r = num / den;
            if (r > best_r) {
                best_r = r;
                best_lag = lag;
            }
        }
        if (best_r > cfg.voicing_threshold && best_lag > 0) {
            const double f0 = static_cast<double>(sample_rate) / best_lag;
            const double u = std::log(f0 / cfg.f0_min) / std::log(cfg.f0_max / cfg.f0_min);
            // soft binning so vibrato near a bin edge splits instead of flips
            const double pos = std::min(std::max(u * cfg.f0_bins - 0.5, 0.0), cfg.f0_bins - 1.0);
            const int b0 = static_cast<int>(pos);
            const int b1 = std::min(b0 + 1, cfg.f0_bins - 1);
            const double frac = pos - b0;
            hist[b0] += 1.0 - frac;
            hist[b1] += frac;
            voiced_frames += 1.0;
        }
    }
    double hnorm = 0;
    for (double h : hist) hnorm += h * h;
    if (hnorm > 1e-18) {
        const double inv = cfg.f0_feature_weight / std::sqrt(hnorm);
        for (double& h : hist) h *= inv;
    }
    (void)voiced_frames;
    feat.insert(feat.end(), hist.begin(), hist.end());
    return detail::project_features(feat, cfg);
}

// Mel-domain variant for evaluating extracted spectrograms (no waveform, so
// no autocorrelation pitch block; it is zeroed on both sides of a
// comparison). Only meaningful against embeddings from this same function.
inline SpeakerEmbedding embed_from_mel(const MelSpectrogram& mel, const EmbedConfig& cfg = {}) {
    std::vector<double> feat = detail::spectral_profile(mel, cfg);
    feat.resize(feat.size() + cfg.f0_bins, 0.0);
    return detail::project_features(feat, cfg);
}

inline double cosine_similarity(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
    if (a.dim() != b.dim())
        throw std::invalid_argument("cosine_similarity: dim mismatch " + std::to_string(a.dim()) +
                                    " vs " + std::to_string(b.dim()));
    double acc = 0;
    for (int i = 0; i < a.dim(); ++i) acc += static_cast<double>(a.vector[i]) * b.vector[i];
    return acc;
}

}  // namespace m2f
