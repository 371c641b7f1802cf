#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mask2flow/grid.hpp"
#include "mask2flow/params.hpp"

// "M2F1" container: 4-byte magic, u32 format version, u64 JSON length, JSON
// metadata (kind, config snapshot, tensor directory), then a contiguous
// little-endian float32 payload. A matrix exchange file is simply a
// one-tensor checkpoint. Round trips are bit-exact.

namespace m2f {

inline constexpr char kCheckpointMagic[4] = {'M', '2', 'F', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensorView {
    std::string name;
    Shape shape;
    const float* data = nullptr;
    size_t count = 0;
};

inline void save_checkpoint(const std::string& path, const std::string& kind,
                            const nlohmann::json& config, const std::vector<NamedTensorView>& tensors,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json dir = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& t : tensors) {
        if (static_cast<int64_t>(t.count) != shape_numel(t.shape))
            throw std::invalid_argument("save_checkpoint: " + t.name + " count does not match shape");
        nlohmann::json e;
        e["name"] = t.name;
        e["shape"] = t.shape;
        e["dtype"] = "f32";
        e["offset"] = offset;
        e["size"] = t.count * sizeof(float);
        dir.push_back(e);
        offset += t.count * sizeof(float);
    }
    nlohmann::json meta;
    meta["kind"] = kind;
    meta["config"] = config;
    meta["extra"] = extra;
    meta["tensors"] = dir;
    const std::string meta_str = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, 4);
    const uint32_t ver = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    const uint64_t jlen = meta_str.size();
    f.write(reinterpret_cast<const char*>(&jlen), 8);
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& t : tensors)
        f.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(t.count * sizeof(float)));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct LoadedTensor {
    Shape shape;
    std::vector<float> data;
};

struct LoadedCheckpoint {
    std::string kind;
    nlohmann::json config;
    nlohmann::json extra;
    std::map<std::string, LoadedTensor> tensors;

    const LoadedTensor& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        return it->second;
    }

    bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(ver));
    uint64_t jlen = 0;
    f.read(reinterpret_cast<char*>(&jlen), 8);
    std::string meta_str(jlen, '\0');
    f.read(meta_str.data(), static_cast<std::streamsize>(jlen));
    if (!f) throw std::runtime_error("load_checkpoint: truncated metadata in " + path);
    nlohmann::json meta = nlohmann::json::parse(meta_str);

    std::vector<char> payload(std::istreambuf_iterator<char>(f), {});
    const uint64_t payload_size = payload.size();

    LoadedCheckpoint out;
    out.kind = meta.at("kind").get<std::string>();
    out.config = meta.at("config");
    out.extra = meta.value("extra", nlohmann::json::object());

    // offsets must be non-overlapping and in-bounds
    std::vector<std::pair<uint64_t, uint64_t>> ranges;
    for (const auto& e : meta.at("tensors")) {
        const uint64_t off = e.at("offset").get<uint64_t>();
        const uint64_t size = e.at("size").get<uint64_t>();
        if (off + size > payload_size)
            throw std::runtime_error("load_checkpoint: tensor '" + e.at("name").get<std::string>() +
                                     "' out of bounds in " + path);
        ranges.emplace_back(off, off + size);
    }
    std::sort(ranges.begin(), ranges.end());
    for (size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second)
            throw std::runtime_error("load_checkpoint: overlapping tensor ranges in " + path);
    }

    for (const auto& e : meta.at("tensors")) {
        LoadedTensor t;
        t.shape = e.at("shape").get<Shape>();
        const uint64_t off = e.at("offset").get<uint64_t>();
        const uint64_t size = e.at("size").get<uint64_t>();
        if (e.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("load_checkpoint: unsupported dtype in " + path);
        if (static_cast<uint64_t>(shape_numel(t.shape)) * sizeof(float) != size)
            throw std::runtime_error("load_checkpoint: shape/size mismatch for '" +
                                     e.at("name").get<std::string>() + "' in " + path);
        t.data.resize(size / sizeof(float));
        std::memcpy(t.data.data(), payload.data() + off, size);
        out.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

// Model checkpoint layout: every registry entry is stored twice, under
// "raw/<name>" and "ema/<name>". Buffers (non-trainable) hold the same bytes
// on both sides so either prefix is a complete weight set.
template <typename T>
void save_model_checkpoint(const std::string& path, const std::string& kind,
                           const nlohmann::json& config, const std::vector<ParamRef<T>>& refs,
                           const std::vector<Tensor<T>>& ema_shadow,
                           const nlohmann::json& extra = nlohmann::json::object()) {
    std::vector<std::vector<float>> storage;
    std::vector<NamedTensorView> views;
    auto push = [&](const std::string& name, const Shape& shape, std::span<const T> data) {
        storage.emplace_back(data.begin(), data.end());
        views.push_back({name, shape, storage.back().data(), storage.back().size()});
    };
    size_t slot = 0;
    for (const auto& r : refs) push("raw/" + r.name, r.tensor->shape(), r.tensor->data());
    for (const auto& r : refs) {
        if (r.trainable) {
            const Tensor<T>& s = ema_shadow.at(slot++);
            push("ema/" + r.name, r.tensor->shape(), s.data());
        } else {
            push("ema/" + r.name, r.tensor->shape(), r.tensor->data());
        }
    }
    save_checkpoint(path, kind, config, views, extra);
}

// Loads either weight set into a registry. Shape mismatches are collected and
// reported as a diff; nothing is ever silently reshaped.
template <typename T>
void load_model_params(const LoadedCheckpoint& ckpt, const std::vector<ParamRef<T>>& refs, bool use_ema) {
    const std::string prefix = use_ema ? "ema/" : "raw/";
    std::string diff;
    int mismatches = 0;
    for (const auto& r : refs) {
        auto it = ckpt.tensors.find(prefix + r.name);
        if (it == ckpt.tensors.end()) {
            diff += "  missing: " + prefix + r.name + "\n";
            ++mismatches;
            continue;
        }
        if (it->second.shape != r.tensor->shape()) {
            diff += "  " + r.name + ": checkpoint " + shape_str(it->second.shape) + " vs model " +
                    shape_str(r.tensor->shape()) + "\n";
            ++mismatches;
        }
    }
    if (mismatches > 0)
        throw std::runtime_error("checkpoint does not match the model config (" +
                                 std::to_string(mismatches) + " diffs):\n" + diff);
    for (const auto& r : refs) {
        const auto& src = ckpt.tensor(prefix + r.name);
        auto dst = r.tensor->data();
        for (size_t i = 0; i < src.data.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
    }
}

// matrix exchange: a one-tensor checkpoint
inline void save_matrix(const std::string& path, const Mat& m,
                        const nlohmann::json& extra = nlohmann::json::object()) {
    NamedTensorView v{"matrix", {m.rows, m.cols}, m.v.data(), m.v.size()};
    save_checkpoint(path, "matrix", nlohmann::json{{"rows", m.rows}, {"cols", m.cols}}, {v}, extra);
}

inline Mat load_matrix(const std::string& path) {
    LoadedCheckpoint c = load_checkpoint(path);
    const LoadedTensor& t = c.tensor("matrix");
    if (t.shape.size() != 2) throw std::runtime_error("load_matrix: not a matrix: " + path);
    Mat m(t.shape[0], t.shape[1]);
    m.v = t.data;
    return m;
}

}  // namespace m2f
