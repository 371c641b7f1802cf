#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mask2flow/params.hpp"
#include "mask2flow/tensor.hpp"

// Training mechanics: AdamW with decoupled weight decay, linear-warmup
// schedule, and an EMA shadow of the trainable parameters.

namespace m2f {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class AdamW {
public:
    explicit AdamW(const std::vector<ParamRef<T>>& refs, AdamWConfig cfg = {}) : cfg_(cfg) {
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            m_.emplace_back(r.tensor->shape(), T(0));
            v_.emplace_back(r.tensor->shape(), T(0));
        }
    }

    int64_t step_count() const { return step_; }

    // param <- param - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * param
    void step(const std::vector<ParamRef<T>>& refs, double lr, double weight_decay) {
        // reject the whole step on any non-finite gradient
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            for (T g : r.tensor->grad()) {
                if (!std::isfinite(static_cast<double>(g)))
                    throw std::runtime_error("AdamW: non-finite gradient in " + r.name);
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        size_t slot = 0;
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            auto p = r.tensor->data();
            auto g = r.tensor->grad();
            auto m = m_[slot].data();
            auto v = v_[slot].data();
            ++slot;
            for (size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i];
                const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
                p[i] = static_cast<T>(p[i] - lr * update - lr * weight_decay * p[i]);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    int64_t step_ = 0;
};

// linear ramp 0 -> base over warmup steps, constant afterwards
inline double lr_schedule(int64_t step, double base_lr, int64_t warmup_steps) {
    if (warmup_steps <= 0) return base_lr;
    if (step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

template <typename T>
class EmaState {
public:
    static EmaState init(const std::vector<ParamRef<T>>& refs) {
        EmaState e;
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            Tensor<T> copy(r.tensor->shape(), T(0));
            std::copy(r.tensor->data().begin(), r.tensor->data().end(), copy.data().begin());
            e.shadow_.push_back(std::move(copy));
        }
        return e;
    }

    // ema <- decay * ema + (1 - decay) * param
    void update(const std::vector<ParamRef<T>>& refs, double decay) {
        size_t slot = 0;
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            auto s = shadow_[slot++].data();
            auto p = r.tensor->data();
            for (size_t i = 0; i < s.size(); ++i)
                s[i] = static_cast<T>(decay * s[i] + (1.0 - decay) * p[i]);
        }
    }

    const std::vector<Tensor<T>>& shadow() const { return shadow_; }

    // write the shadow values into a parameter set (buffers untouched)
    void copy_to(const std::vector<ParamRef<T>>& refs) const {
        size_t slot = 0;
        for (const auto& r : refs) {
            if (!r.trainable) continue;
            auto s = shadow_[slot++].data();
            std::copy(s.begin(), s.end(), r.tensor->data().begin());
        }
    }

private:
    std::vector<Tensor<T>> shadow_;
};

}  // namespace m2f
