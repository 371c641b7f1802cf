#pragma once

#include <string>
#include <vector>

#include "mask2flow/config.hpp"
#include "mask2flow/dsp.hpp"
#include "mask2flow/mixture.hpp"
#include "mask2flow/speaker.hpp"
#include "mask2flow/wav.hpp"

// Manifest -> in-memory feature items shared by training, inference and
// evaluation.

namespace m2f {

struct DataItem {
    int id = 0;
    Mat x_log;   // mixture log-mel
    Mat y_log;   // clean target log-mel
    std::vector<float> reference;  // reference waveform (for embeddings)
    SpeakerEmbedding d;
    int target_speaker = -1;
    uint64_t seed = 0;
    double snr_db = std::numeric_limits<double>::quiet_NaN();
    double duration_s = 0;
};

inline std::vector<float> chunk_waveform(std::vector<float> w, double chunk_seconds, int sample_rate) {
    const size_t n = static_cast<size_t>(chunk_seconds * sample_rate);
    if (n > 0 && w.size() > n) w.resize(n);
    return w;
}

inline std::vector<DataItem> load_items(const Manifest& manifest, const FrontendConfig& frontend,
                                        const EmbedConfig& embed_cfg, double chunk_seconds = 0) {
    std::vector<DataItem> items;
    items.reserve(manifest.items.size());
    for (const auto& mi : manifest.items) {
        DataItem it;
        it.id = mi.id;
        it.target_speaker = mi.target_speaker;
        it.seed = mi.seed;
        it.snr_db = mi.snr_db;
        it.duration_s = mi.duration_s;
        WavData mix = read_wav(manifest_item_path(manifest, mi.mixture));
        WavData tgt = read_wav(manifest_item_path(manifest, mi.target));
        WavData ref = read_wav(manifest_item_path(manifest, mi.reference));
        if (mix.sample_rate != frontend.sample_rate)
            throw std::runtime_error("load_items: sample rate mismatch in " + mi.mixture);
        auto mw = chunk_waveform(std::move(mix.samples), chunk_seconds, frontend.sample_rate);
        auto tw = chunk_waveform(std::move(tgt.samples), chunk_seconds, frontend.sample_rate);
        it.x_log = log_mel(mw, frontend).frames;
        it.y_log = log_mel(tw, frontend).frames;
        it.reference = std::move(ref.samples);
        it.d = embed(it.reference, frontend.sample_rate, embed_cfg);
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace m2f
