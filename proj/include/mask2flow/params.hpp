#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "mask2flow/tensor.hpp"

// Named parameter registry shared by the networks: drives the optimizer, EMA,
// checkpoint serialization and parameter counting. Buffers (running
// statistics) are registered as non-trainable.

namespace m2f {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor = nullptr;
    bool trainable = true;
};

template <typename T>
int64_t trainable_count(const std::vector<ParamRef<T>>& refs) {
    int64_t n = 0;
    for (const auto& r : refs)
        if (r.trainable) n += r.tensor->numel();
    return n;
}

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& refs) {
    for (const auto& r : refs)
        if (r.trainable) r.tensor->zero_grad();
}

template <typename T>
void set_requires_grad(const std::vector<ParamRef<T>>& refs, bool v) {
    for (const auto& r : refs) r.tensor->set_requires_grad(r.trainable && v);
}

template <typename T, typename U>
void copy_params(const std::vector<ParamRef<T>>& dst, const std::vector<ParamRef<U>>& src) {
    if (dst.size() != src.size()) throw std::invalid_argument("copy_params: registry size mismatch");
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].tensor->numel() != src[i].tensor->numel())
            throw std::invalid_argument("copy_params: size mismatch at " + dst[i].name);
        auto d = dst[i].tensor->data();
        auto s = src[i].tensor->data();
        for (int64_t j = 0; j < dst[i].tensor->numel(); ++j) d[j] = static_cast<T>(s[j]);
    }
}

template <typename T>
bool params_equal_bytes(const std::vector<ParamRef<T>>& a, const std::vector<ParamRef<T>>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].tensor->numel() != b[i].tensor->numel()) return false;
        if (std::memcmp(a[i].tensor->data().data(), b[i].tensor->data().data(),
                        sizeof(T) * a[i].tensor->numel()) != 0)
            return false;
    }
    return true;
}

}  // namespace m2f
