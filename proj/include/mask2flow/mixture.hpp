#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mask2flow/rng.hpp"
#include "mask2flow/wav.hpp"

// Synthetic mixture simulator: procedural harmonic "speakers", SNR-exact
// mixing, synthetic room reverb, and dataset generation with a JSON manifest.
// Everything is a pure function of (parameters, seed).

namespace m2f {

enum class Condition { clean, additive, reverb };

inline std::string condition_name(Condition c) {
    switch (c) {
        case Condition::clean: return "clean";
        case Condition::additive: return "additive";
        case Condition::reverb: return "reverb";
    }
    return "?";
}

inline Condition condition_from_name(const std::string& s) {
    if (s == "clean") return Condition::clean;
    if (s == "additive") return Condition::additive;
    if (s == "reverb") return Condition::reverb;
    throw std::invalid_argument("unknown condition '" + s + "' (clean|additive|reverb)");
}

struct SyntheticSpeaker {
    int speaker_id = 0;
    double f0 = 120.0;                      // Hz
    double formants[3] = {500, 1500, 2500}; // center frequencies, strictly increasing
    double bandwidths[3] = {90, 140, 200};
    double vibrato_rate = 5.5;   // Hz
    double vibrato_cents = 15.0;

    static SyntheticSpeaker from_id(int id) {
        Rng rng(0x5eedf00d ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(id + 1)));
        SyntheticSpeaker s;
        s.speaker_id = id;
        s.f0 = rng.uniform(80.0, 320.0);
        s.formants[0] = rng.uniform(280.0, 850.0);
        s.formants[1] = s.formants[0] + rng.uniform(350.0, 1300.0);
        s.formants[2] = s.formants[1] + rng.uniform(500.0, 1500.0);
        s.bandwidths[0] = rng.uniform(60.0, 120.0);
        s.bandwidths[1] = rng.uniform(90.0, 180.0);
        s.bandwidths[2] = rng.uniform(120.0, 250.0);
        s.vibrato_rate = rng.uniform(4.5, 6.5);
        s.vibrato_cents = rng.uniform(8.0, 25.0);
        return s;
    }
};

// Harmonic source with formant-shaped partial amplitudes, light vibrato,
// voiced/unvoiced segmentation and a per-segment envelope. Peak 0.5.
inline std::vector<float> synth_utterance(const SyntheticSpeaker& spk, double duration_s, uint64_t seed,
                                          int sample_rate = 16000) {
    if (duration_s < 0.5) throw std::invalid_argument("synth_utterance: duration must be >= 0.5 s");
    Rng rng(seed ^ 0xa5a5ull * (spk.speaker_id + 7));
    const int n = static_cast<int>(duration_s * sample_rate);
    std::vector<float> out(n, 0.0f);

    auto formant_gain = [&](double f) {
        static const double peak[3] = {1.0, 0.7, 0.45};
        double g = 0.03;
        for (int i = 0; i < 3; ++i) {
            const double d = (f - spk.formants[i]) / spk.bandwidths[i];
            g += peak[i] / (1.0 + d * d);
        }
        return g;
    };

    const int kmax = std::max(2, static_cast<int>(4500.0 / spk.f0));
    std::vector<double> amp(kmax + 1, 0.0), phase(kmax + 1, 0.0);
    for (int k = 1; k <= kmax; ++k) amp[k] = formant_gain(k * spk.f0) / std::sqrt(static_cast<double>(k));
    for (int k = 1; k <= kmax; ++k) phase[k] = rng.uniform(0.0, 2.0 * M_PI);

    // first segment voiced so tests can rely on a voiced head
    int pos = 0;
    bool voiced = true;
    while (pos < n) {
        const double seg_s = voiced ? rng.uniform(0.18, 0.42) : rng.uniform(0.04, 0.10);
        const int seg = std::min(n - pos, std::max(1, static_cast<int>(seg_s * sample_rate)));
        const double level = voiced ? rng.uniform(0.55, 1.0) : rng.uniform(0.02, 0.05);
        const int ramp = std::min(seg / 4, sample_rate / 50);
        for (int i = 0; i < seg; ++i) {
            double env = level;
            if (i < ramp) env *= static_cast<double>(i) / ramp;
            if (seg - 1 - i < ramp) env *= static_cast<double>(seg - 1 - i) / ramp;
            const double t = static_cast<double>(pos + i) / sample_rate;
            double s;
            if (voiced) {
                const double vib = std::pow(2.0, spk.vibrato_cents / 1200.0 *
                                                     std::sin(2.0 * M_PI * spk.vibrato_rate * t));
                const double f0t = spk.f0 * vib;
                s = 0.0;
                for (int k = 1; k <= kmax; ++k) {
                    phase[k] += 2.0 * M_PI * k * f0t / sample_rate;
                    s += amp[k] * std::sin(phase[k]);
                }
            } else {
                s = rng.normal();
            }
            out[static_cast<size_t>(pos + i)] = static_cast<float>(env * s);
        }
        pos += seg;
        voiced = !voiced;
    }

    float peak = 0;
    for (float v : out) peak = std::max(peak, std::fabs(v));
    if (peak > 0) {
        const float g = 0.5f / peak;
        for (float& v : out) v *= g;
    }
    return out;
}

struct MixResult {
    std::vector<float> mixture;
    std::vector<float> interference_scaled;
};

inline double signal_energy(const std::vector<float>& x) {
    double e = 0;
    for (float v : x) e += static_cast<double>(v) * v;
    return e;
}

// Scales the interference so that 10*log10(E_target / E_interference) equals
// snr_db, then sums. Fully overlapping by construction; the interferer is
// looped or trimmed to the target length.
inline MixResult mix_at_snr(const std::vector<float>& target, std::vector<float> interference, double snr_db) {
    if (target.empty() || interference.empty())
        throw std::invalid_argument("mix_at_snr: empty input");
    if (interference.size() < target.size()) {
        std::vector<float> looped(target.size());
        for (size_t i = 0; i < looped.size(); ++i) looped[i] = interference[i % interference.size()];
        interference = std::move(looped);
    } else {
        interference.resize(target.size());
    }
    const double ey = signal_energy(target);
    const double ez = signal_energy(interference);
    if (ey <= 0.0) throw std::invalid_argument("mix_at_snr: silent target");
    if (ez <= 0.0) throw std::invalid_argument("mix_at_snr: silent interference");
    const double gain = std::sqrt(ey / (ez * std::pow(10.0, snr_db / 10.0)));

    MixResult out;
    out.interference_scaled.resize(target.size());
    out.mixture.resize(target.size());
    for (size_t i = 0; i < target.size(); ++i) {
        out.interference_scaled[i] = static_cast<float>(interference[i] * gain);
        out.mixture[i] = target[i] + out.interference_scaled[i];
    }
    return out;
}

inline double measure_snr_db(const std::vector<float>& target, const std::vector<float>& interference) {
    return 10.0 * std::log10(signal_energy(target) / signal_energy(interference));
}

// Sparse early reflections plus an exponentially decaying Gaussian tail.
// RT60 drawn from U(0.2, 0.8) s.
inline std::vector<float> build_rir(uint64_t seed, int sample_rate = 16000) {
    Rng rng(seed ^ 0x4171ull);
    const double rt60 = rng.uniform(0.2, 0.8);
    const int len = static_cast<int>(rt60 * sample_rate);
    std::vector<float> h(len, 0.0f);
    h[0] = 1.0f;
    const int n_ref = 6 + static_cast<int>(rng.uniform_int(5));
    for (int i = 0; i < n_ref; ++i) {
        const int d = static_cast<int>(rng.uniform(0.002, 0.04) * sample_rate);
        if (d > 0 && d < len) {
            const double a = rng.uniform(0.15, 0.5) * (rng.uniform_int(2) ? 1.0 : -1.0);
            h[d] += static_cast<float>(a);
        }
    }
    const double decay = 6.907755278982137 / rt60;  // ln(10^3): -60 dB at rt60
    const int tail_start = static_cast<int>(0.005 * sample_rate);
    for (int i = tail_start; i < len; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        h[i] += static_cast<float>(0.25 * rng.normal() * std::exp(-decay * t));
    }
    return h;
}

// Direct-form convolution truncated to the input length; output re-peaked to
// the input peak.
inline std::vector<float> convolve_rir(const std::vector<float>& x, const std::vector<float>& rir) {
    std::vector<float> out(x.size(), 0.0f);
    for (size_t n = 0; n < x.size(); ++n) {
        double acc = 0;
        const size_t mmax = std::min(rir.size() - 1, n);
        for (size_t m = 0; m <= mmax; ++m) acc += static_cast<double>(rir[m]) * x[n - m];
        out[n] = static_cast<float>(acc);
    }
    float pin = 0, pout = 0;
    for (float v : x) pin = std::max(pin, std::fabs(v));
    for (float v : out) pout = std::max(pout, std::fabs(v));
    if (pin > 0 && pout > 0) {
        const float g = pin / pout;
        for (float& v : out) v *= g;
    }
    return out;
}

inline std::vector<float> apply_reverb(const std::vector<float>& x, uint64_t seed, int sample_rate = 16000) {
    return convolve_rir(x, build_rir(seed, sample_rate));
}

// One training/eval item, fully in memory.
struct MixtureSample {
    std::vector<float> mixture, target, interference, reference;
    Condition condition = Condition::clean;
    double snr_db = std::numeric_limits<double>::quiet_NaN();
    uint64_t seed = 0;
    int target_speaker_id = -1;
    int interferer_speaker_id = -1;
};

struct GenOptions {
    double duration_s = 2.0;
    double snr_lo = 1.0;
    double snr_hi = 10.0;
    int num_speakers = 200;
    int sample_rate = 16000;
};

inline MixtureSample generate_item(Condition condition, uint64_t dataset_seed, int index,
                                   const GenOptions& opt = {}) {
    Rng rng = Rng(dataset_seed).fork(static_cast<uint64_t>(index));
    MixtureSample s;
    s.condition = condition;
    s.seed = rng.next_u64();
    Rng item(s.seed);

    s.target_speaker_id = static_cast<int>(item.uniform_int(opt.num_speakers));
    do {
        s.interferer_speaker_id = static_cast<int>(item.uniform_int(opt.num_speakers));
    } while (s.interferer_speaker_id == s.target_speaker_id);

    const SyntheticSpeaker spk_t = SyntheticSpeaker::from_id(s.target_speaker_id);
    const SyntheticSpeaker spk_i = SyntheticSpeaker::from_id(s.interferer_speaker_id);

    const uint64_t target_seed = item.next_u64();
    uint64_t ref_seed = item.next_u64();
    if (ref_seed == target_seed) ref_seed ^= 1;  // different utterance, same speaker
    const uint64_t interf_seed = item.next_u64();

    s.target = synth_utterance(spk_t, opt.duration_s, target_seed, opt.sample_rate);
    s.reference = synth_utterance(spk_t, opt.duration_s, ref_seed, opt.sample_rate);

    if (condition == Condition::clean) {
        s.mixture = s.target;
        s.interference.assign(s.target.size(), 0.0f);
        s.interferer_speaker_id = -1;
        return s;
    }
    std::vector<float> raw_interf = synth_utterance(spk_i, opt.duration_s, interf_seed, opt.sample_rate);
    s.snr_db = item.uniform(opt.snr_lo, opt.snr_hi);
    MixResult mr = mix_at_snr(s.target, raw_interf, s.snr_db);
    s.interference = std::move(mr.interference_scaled);
    s.mixture = std::move(mr.mixture);
    if (condition == Condition::reverb) {
        s.mixture = apply_reverb(s.mixture, item.next_u64(), opt.sample_rate);
    }
    return s;
}

struct ManifestItem {
    int id = 0;
    std::string mixture, target, interference, reference;  // paths relative to the manifest
    int target_speaker = -1;
    int interferer_speaker = -1;
    double snr_db = std::numeric_limits<double>::quiet_NaN();
    uint64_t seed = 0;
    double duration_s = 0;
};

struct Manifest {
    int version = 1;
    std::string condition;
    uint64_t seed = 0;
    int sample_rate = 16000;
    std::vector<ManifestItem> items;
    std::string base_dir;  // set on load; not serialized
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["condition"] = m.condition;
    j["seed"] = m.seed;
    j["sample_rate"] = m.sample_rate;
    j["items"] = nlohmann::json::array();
    for (const auto& it : m.items) {
        nlohmann::json ji;
        ji["id"] = it.id;
        ji["mixture"] = it.mixture;
        ji["target"] = it.target;
        if (!it.interference.empty()) ji["interference"] = it.interference;
        ji["reference"] = it.reference;
        ji["target_speaker"] = it.target_speaker;
        if (it.interferer_speaker >= 0) ji["interferer_speaker"] = it.interferer_speaker;
        if (std::isfinite(it.snr_db))
            ji["snr_db"] = it.snr_db;
        else
            ji["snr_db"] = nullptr;
        ji["seed"] = it.seed;
        ji["duration_s"] = it.duration_s;
        j["items"].push_back(ji);
    }
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j, const std::string& base_dir) {
    Manifest m;
    m.version = j.at("version").get<int>();
    m.condition = j.at("condition").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.sample_rate = j.at("sample_rate").get<int>();
    m.base_dir = base_dir;
    for (const auto& ji : j.at("items")) {
        ManifestItem it;
        it.id = ji.at("id").get<int>();
        it.mixture = ji.at("mixture").get<std::string>();
        it.target = ji.at("target").get<std::string>();
        if (ji.contains("interference")) it.interference = ji.at("interference").get<std::string>();
        it.reference = ji.at("reference").get<std::string>();
        it.target_speaker = ji.at("target_speaker").get<int>();
        if (ji.contains("interferer_speaker")) it.interferer_speaker = ji.at("interferer_speaker").get<int>();
        if (!ji.at("snr_db").is_null()) it.snr_db = ji.at("snr_db").get<double>();
        it.seed = ji.at("seed").get<uint64_t>();
        it.duration_s = ji.at("duration_s").get<double>();
        m.items.push_back(std::move(it));
    }
    return m;
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return manifest_from_json(j, std::filesystem::path(path).parent_path().string());
}

inline std::string manifest_item_path(const Manifest& m, const std::string& rel) {
    if (rel.empty()) return rel;
    return (std::filesystem::path(m.base_dir) / rel).string();
}

// Writes n items as WAV files plus manifest.json. Byte-reproducible for a
// fixed (n, condition, seed, options).
inline Manifest generate_dataset(int n, Condition condition, uint64_t seed, const std::string& out_dir,
                                 const GenOptions& opt = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_dir + ": " + ec.message());

    Manifest m;
    m.condition = condition_name(condition);
    m.seed = seed;
    m.sample_rate = opt.sample_rate;
    for (int i = 0; i < n; ++i) {
        MixtureSample s = generate_item(condition, seed, i, opt);
        char id[16];
        std::snprintf(id, sizeof(id), "%04d", i);
        ManifestItem it;
        it.id = i;
        it.mixture = std::string("item_") + id + "_mixture.wav";
        it.target = std::string("item_") + id + "_target.wav";
        it.reference = std::string("item_") + id + "_reference.wav";
        write_wav((fs::path(out_dir) / it.mixture).string(), s.mixture, opt.sample_rate);
        write_wav((fs::path(out_dir) / it.target).string(), s.target, opt.sample_rate);
        write_wav((fs::path(out_dir) / it.reference).string(), s.reference, opt.sample_rate);
        if (condition != Condition::clean) {
            it.interference = std::string("item_") + id + "_interference.wav";
            write_wav((fs::path(out_dir) / it.interference).string(), s.interference, opt.sample_rate);
        }
        it.target_speaker = s.target_speaker_id;
        it.interferer_speaker = s.interferer_speaker_id;
        it.snr_db = s.snr_db;
        it.seed = s.seed;
        it.duration_s = opt.duration_s;
        m.items.push_back(std::move(it));
    }
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    if (!f) throw std::runtime_error("generate_dataset: cannot write manifest in " + out_dir);
    f << manifest_to_json(m).dump(2) << "\n";
    m.base_dir = out_dir;
    return m;
}

}  // namespace m2f
