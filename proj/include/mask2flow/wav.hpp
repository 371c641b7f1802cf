#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// 16-bit PCM mono WAV read/write. Quantization is fixed (round half away from
// zero after clamping to [-1, 1]) so generation is byte-reproducible.

namespace m2f {

inline void write_wav(const std::string& path, std::span<const float> samples, int sample_rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path);

    auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u16 = [&](uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };

    const uint32_t data_size = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    put_u32(36 + data_size);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(static_cast<uint32_t>(sample_rate));
    put_u32(static_cast<uint32_t>(sample_rate) * 2);
    put_u16(2);
    put_u16(16);
    f.write("data", 4);
    put_u32(data_size);
    for (float s : samples) {
        float c = s < -1.0f ? -1.0f : (s > 1.0f ? 1.0f : s);
        int16_t q = static_cast<int16_t>(std::lround(c * 32767.0f));
        f.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

struct WavData {
    std::vector<float> samples;
    int sample_rate = 0;
};

inline WavData read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav: cannot open " + path);

    char tag[4];
    auto get_u32 = [&]() {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u16 = [&]() {
        uint16_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 2);
        return v;
    };

    f.read(tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error("read_wav: not RIFF: " + path);
    get_u32();
    f.read(tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error("read_wav: not WAVE: " + path);

    WavData out;
    int channels = 0, bits = 0;
    bool have_fmt = false;
    while (f.read(tag, 4)) {
        uint32_t chunk = get_u32();
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            uint16_t fmt = get_u16();
            channels = get_u16();
            out.sample_rate = static_cast<int>(get_u32());
            get_u32();
            get_u16();
            bits = get_u16();
            if (chunk > 16) f.seekg(chunk - 16, std::ios::cur);
            if (fmt != 1) throw std::runtime_error("read_wav: not PCM: " + path);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("read_wav: data before fmt: " + path);
            if (channels != 1 || bits != 16) {
                throw std::runtime_error("read_wav: expected 16-bit mono, got " + std::to_string(bits) +
                                         "-bit " + std::to_string(channels) + "ch: " + path);
            }
            const size_t n = chunk / 2;
            out.samples.resize(n);
            std::vector<int16_t> raw(n);
            f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(chunk));
            if (!f) throw std::runtime_error("read_wav: truncated data chunk: " + path);
            for (size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(raw[i]) / 32767.0f;
            return out;
        } else {
            f.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    throw std::runtime_error("read_wav: no data chunk: " + path);
}

}  // namespace m2f
