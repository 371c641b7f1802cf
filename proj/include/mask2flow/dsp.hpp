#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mask2flow/grid.hpp"

// Waveform -> log-mel frontend. Magnitude (not power) mel with Slaney-style
// area normalization, log10 with a fixed floor. Pure functions throughout.

namespace m2f {

struct FrontendConfig {
    int sample_rate = 16000;
    int fft_size = 400;
    int hop = 160;
    int mel_bands = 80;
    double fmin = 0.0;
    double fmax = -1.0;  // -1 -> sample_rate / 2
    double log_floor = 1e-10;
    // Whisper-style dynamic range clamp (max - 8). Off by default: it breaks
    // the normalize/denormalize round trip.
    bool whisper_clamp = false;

    double effective_fmax() const { return fmax < 0 ? sample_rate / 2.0 : fmax; }

    void validate() const {
        if (hop <= 0 || fft_size <= 0 || hop > fft_size)
            throw std::invalid_argument("FrontendConfig: need 0 < hop <= fft_size");
        if (mel_bands < 4) throw std::invalid_argument("FrontendConfig: mel_bands must be >= 4");
        if (effective_fmax() > sample_rate / 2.0 + 1e-9)
            throw std::invalid_argument("FrontendConfig: fmax above Nyquist");
    }

    bool operator==(const FrontendConfig&) const = default;
};

struct MelSpectrogram {
    Mat frames;  // time x mel_bands, log10 magnitude domain
    FrontendConfig config;

    int num_frames() const { return frames.rows; }
    int bands() const { return frames.cols; }
};

struct StftFrames {
    Mat re;  // time x bins
    Mat im;
    int bins() const { return re.cols; }
};

inline int stft_frame_count(size_t samples, const FrontendConfig& cfg) {
    if (samples < static_cast<size_t>(cfg.fft_size)) return 0;
    return static_cast<int>((samples - cfg.fft_size) / cfg.hop) + 1;
}

// Hann-windowed, unnormalized forward transform; bins 0..fft_size/2.
inline StftFrames stft(std::span<const float> wave, const FrontendConfig& cfg) {
    cfg.validate();
    if (wave.size() < static_cast<size_t>(cfg.fft_size)) {
        throw std::invalid_argument("stft: waveform has " + std::to_string(wave.size()) +
                                    " samples, need at least " + std::to_string(cfg.fft_size));
    }
    const int n = cfg.fft_size;
    const int bins = n / 2 + 1;
    const int frames = stft_frame_count(wave.size(), cfg);

    std::vector<double> window(n);
    for (int i = 0; i < n; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);

    // Direct real-input DFT with precomputed twiddles. fft_size 400 is not a
    // power of two and frame counts are desk-scale, so O(N^2) is fine here.
    std::vector<double> cos_t(static_cast<size_t>(bins) * n), sin_t(static_cast<size_t>(bins) * n);
    for (int k = 0; k < bins; ++k)
        for (int i = 0; i < n; ++i) {
            const double a = 2.0 * M_PI * k * i / n;
            cos_t[static_cast<size_t>(k) * n + i] = std::cos(a);
            sin_t[static_cast<size_t>(k) * n + i] = std::sin(a);
        }

    StftFrames out;
    out.re = Mat(frames, bins);
    out.im = Mat(frames, bins);
    std::vector<double> buf(n);
    for (int t = 0; t < frames; ++t) {
        const float* src = wave.data() + static_cast<size_t>(t) * cfg.hop;
        for (int i = 0; i < n; ++i) buf[i] = window[i] * src[i];
        for (int k = 0; k < bins; ++k) {
            const double* ct = cos_t.data() + static_cast<size_t>(k) * n;
            const double* st = sin_t.data() + static_cast<size_t>(k) * n;
            double re = 0, im = 0;
            for (int i = 0; i < n; ++i) {
                re += buf[i] * ct[i];
                im -= buf[i] * st[i];
            }
            out.re.at(t, k) = static_cast<float>(re);
            out.im.at(t, k) = static_cast<float>(im);
        }
    }
    return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filterbank, mel_bands x bins, Slaney area normalization.
inline MatD mel_filterbank(const FrontendConfig& cfg) {
    const int bins = cfg.fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.effective_fmax());
    std::vector<double> edges(cfg.mel_bands + 2);
    for (int i = 0; i < cfg.mel_bands + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.mel_bands + 1));

    MatD fb(cfg.mel_bands, bins);
    for (int b = 0; b < cfg.mel_bands; ++b) {
        const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
        const double norm = 2.0 / (hi - lo);
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            fb.at(b, k) = w * norm;
        }
    }
    return fb;
}

inline double mel_band_center_hz(const FrontendConfig& cfg, int band) {
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.effective_fmax());
    return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (band + 1) / (cfg.mel_bands + 1));
}

inline MelSpectrogram log_mel(std::span<const float> wave, const FrontendConfig& cfg) {
    StftFrames sf = stft(wave, cfg);
    const MatD fb = mel_filterbank(cfg);
    const int frames = sf.re.rows, bins = sf.re.cols;

    MelSpectrogram out;
    out.config = cfg;
    out.frames = Mat(frames, cfg.mel_bands);
    std::vector<double> mag(bins);
    for (int t = 0; t < frames; ++t) {
        for (int k = 0; k < bins; ++k) {
            const double re = sf.re.at(t, k), im = sf.im.at(t, k);
            mag[k] = std::sqrt(re * re + im * im);
        }
        for (int b = 0; b < cfg.mel_bands; ++b) {
            const double* w = fb.v.data() + static_cast<size_t>(b) * bins;
            double acc = 0;
            for (int k = 0; k < bins; ++k) acc += w[k] * mag[k];
            out.frames.at(t, b) = static_cast<float>(std::log10(std::max(acc, cfg.log_floor)));
        }
    }
    if (cfg.whisper_clamp) {
        float mx = out.frames.v[0];
        for (float v : out.frames.v) mx = std::max(mx, v);
        for (float& v : out.frames.v) v = std::max(v, mx - 8.0f);
    }
    return out;
}

struct NormalizedMel {
    MelSpectrogram spec;
    float norm = 1.0f;  // the (clamped) divisor; multiply back to denormalize
};

inline NormalizedMel l2_normalize(const MelSpectrogram& spec) {
    if (spec.frames.empty()) throw std::invalid_argument("l2_normalize: empty spectrogram");
    double acc = 0;
    for (float v : spec.frames.v) acc += static_cast<double>(v) * v;
    const float norm = std::max(static_cast<float>(std::sqrt(acc)), 1e-8f);
    NormalizedMel out;
    out.spec.config = spec.config;
    out.spec.frames = Mat(spec.frames.rows, spec.frames.cols);
    for (size_t i = 0; i < spec.frames.v.size(); ++i) out.spec.frames.v[i] = spec.frames.v[i] / norm;
    out.norm = norm;
    return out;
}

// elementwise 10^v; inverse of the log map up to the floor
inline Mat to_linear_mel(const MelSpectrogram& spec) {
    Mat out(spec.frames.rows, spec.frames.cols);
    for (size_t i = 0; i < spec.frames.v.size(); ++i)
        out.v[i] = static_cast<float>(std::pow(10.0, static_cast<double>(spec.frames.v[i])));
    return out;
}

inline Mat to_linear_mel(const Mat& log_frames) {
    Mat out(log_frames.rows, log_frames.cols);
    for (size_t i = 0; i < log_frames.v.size(); ++i)
        out.v[i] = static_cast<float>(std::pow(10.0, static_cast<double>(log_frames.v[i])));
    return out;
}

template <typename T>
GridMat<T> to_linear_mel_t(const GridMat<T>& log_frames) {
    GridMat<T> out(log_frames.rows, log_frames.cols);
    for (size_t i = 0; i < log_frames.v.size(); ++i)
        out.v[i] = static_cast<T>(std::pow(10.0, static_cast<double>(log_frames.v[i])));
    return out;
}

}  // namespace m2f
