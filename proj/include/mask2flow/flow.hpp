#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mask2flow/dit.hpp"
#include "mask2flow/dsp.hpp"
#include "mask2flow/grid.hpp"
#include "mask2flow/masknet.hpp"
#include "mask2flow/rng.hpp"
#include "mask2flow/speaker.hpp"

// Rectified flow machinery: straight-line trajectories (sigma_t = 0),
// velocity regression target u = x1 - x0, Euler integration over a uniform
// grid, and the two-stage inference composition.

namespace m2f {

enum class PriorKind { gaussian, mixture, masked };

inline std::string prior_name(PriorKind k) {
    switch (k) {
        case PriorKind::gaussian: return "gaussian";
        case PriorKind::mixture: return "mixture";
        case PriorKind::masked: return "masked";
    }
    return "?";
}

inline PriorKind prior_from_name(const std::string& s) {
    if (s == "gaussian") return PriorKind::gaussian;
    if (s == "mixture") return PriorKind::mixture;
    if (s == "masked") return PriorKind::masked;
    throw std::invalid_argument("unknown prior '" + s + "' (gaussian|mixture|masked)");
}

struct FlowPrior {
    PriorKind kind = PriorKind::masked;
    double noise_scale = 1.0;  // gaussian prior only
    // Noisy-path variant: adds sigma_t * eps to the interpolant during
    // training. Off by default; the straight (rectified) path is the model.
    double sigma_t = 0.0;
};

template <typename T>
struct FlowSample {
    GridMat<T> x0, x1, x_t, u;
    double t = 0;
};

// x0 per prior kind, then the straight interpolation x_t = (1-t) x0 + t x1
// and its constant velocity u = x1 - x0. Endpoints are exact.
template <typename T>
FlowSample<T> make_trajectory_sample(const FlowPrior& prior, const GridMat<T>& x_mix,
                                     const GridMat<T>* x_enh, const GridMat<T>& y, double t, Rng& rng) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("make_trajectory_sample: t must be in [0,1]");
    FlowSample<T> s;
    s.t = t;
    switch (prior.kind) {
        case PriorKind::gaussian: {
            s.x0 = GridMat<T>(y.rows, y.cols);
            for (auto& v : s.x0.v) v = static_cast<T>(rng.normal() * prior.noise_scale);
            break;
        }
        case PriorKind::mixture:
            require_same_shape(x_mix, y, "make_trajectory_sample");
            s.x0 = x_mix;
            break;
        case PriorKind::masked:
            if (!x_enh) throw std::invalid_argument("make_trajectory_sample: masked prior without X_enh");
            require_same_shape(*x_enh, y, "make_trajectory_sample");
            s.x0 = *x_enh;
            break;
    }
    s.x1 = y;
    s.x_t = GridMat<T>(y.rows, y.cols);
    s.u = GridMat<T>(y.rows, y.cols);
    const T t1 = static_cast<T>(t), t0 = static_cast<T>(1.0 - t);
    for (size_t i = 0; i < s.x_t.v.size(); ++i) {
        s.x_t.v[i] = t0 * s.x0.v[i] + t1 * s.x1.v[i];
        s.u.v[i] = s.x1.v[i] - s.x0.v[i];
    }
    if (prior.sigma_t > 0.0) {
        for (auto& v : s.x_t.v) v += static_cast<T>(prior.sigma_t * rng.normal());
    }
    return s;
}

// mean squared velocity-matching error
template <typename T>
Tensor<T> flow_loss(Tape<T>* tape, Tensor<T> v_pred, Tensor<T> u_target) {
    return mse(tape, v_pred, u_target);
}

template <typename T>
using VelocityFn = std::function<GridMat<T>(const GridMat<T>&, double)>;

// Uniform-grid Euler: x_{k+1} = x_k + (1/steps) v(x_k, k/steps). Returns the
// whole trajectory x_0..x_steps; the D/I analyzer consumes the intermediate
// states.
template <typename T>
std::vector<GridMat<T>> euler_integrate(const GridMat<T>& x0, int steps, const VelocityFn<T>& velocity) {
    if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
    std::vector<GridMat<T>> states;
    states.reserve(steps + 1);
    states.push_back(x0);
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t_k = static_cast<double>(k) / steps;
        GridMat<T> v = velocity(states.back(), t_k);
        require_same_shape(v, x0, "euler_integrate");
        GridMat<T> next(x0.rows, x0.cols);
        const GridMat<T>& cur = states.back();
        for (size_t i = 0; i < next.v.size(); ++i)
            next.v[i] = static_cast<T>(cur.v[i] + dt * v.v[i]);
        if (!next.all_finite())
            throw std::runtime_error("euler_integrate: non-finite state after step " + std::to_string(k + 1));
        states.push_back(std::move(next));
    }
    return states;
}

template <typename T>
GridMat<T> tensor_to_grid(const Tensor<T>& t) {
    GridMat<T> g(t.dim(0), t.dim(1));
    std::copy(t.data().begin(), t.data().end(), g.v.begin());
    return g;
}

template <typename T>
Tensor<T> grid_to_tensor(const GridMat<T>& g) {
    return Tensor<T>::from_data({g.rows, g.cols}, g.v);
}

struct InferResult {
    MelSpectrogram y_hat;
    Mat mask;                    // defined only when the mask stage ran
    Mat x_enh;                   // idem
    std::vector<Mat> trajectory; // x_0..x_steps (log-mel domain states)
};

// End-to-end inference. Masked prior: X -> l2-normalize -> mask -> apply in
// linear domain -> Euler from X_enh with X_enh as conditioning. The mixture
// and gaussian priors skip the mask stage and condition on the mixture X.
inline InferResult tse_infer(const MelSpectrogram& x_mel, const SpeakerEmbedding& d,
                             MaskNetParams<float>* mask_params, DiTParams<float>& flow_params,
                             const FlowPrior& prior, int steps, uint64_t noise_seed = 1) {
    if (prior.kind == PriorKind::masked && !mask_params)
        throw std::invalid_argument("tse_infer: masked prior requires a mask checkpoint");
    if (static_cast<int>(d.vector.size()) != flow_params.cfg.embed_dim)
        throw std::invalid_argument("tse_infer: embedding dim " + std::to_string(d.vector.size()) +
                                    " vs flow config " + std::to_string(flow_params.cfg.embed_dim));

    InferResult out;
    Tensor<float> d_t = Tensor<float>::from_data({1, d.dim()}, d.vector);

    if (mask_params) {
        NormalizedMel norm = l2_normalize(x_mel);
        Tensor<float> x_norm = grid_to_tensor(norm.spec.frames);
        Tensor<float> m = mask_forward<float>(nullptr, x_norm, d_t, *mask_params, /*train=*/false);
        out.mask = tensor_to_grid(m);
        out.x_enh = apply_mask(x_mel.frames, out.mask);
    }

    Mat x0;
    switch (prior.kind) {
        case PriorKind::gaussian: {
            Rng rng(noise_seed ^ 0x9a551e5ull);
            x0 = Mat(x_mel.frames.rows, x_mel.frames.cols);
            for (auto& v : x0.v) v = static_cast<float>(rng.normal() * prior.noise_scale);
            break;
        }
        case PriorKind::mixture:
            x0 = x_mel.frames;
            break;
        case PriorKind::masked:
            x0 = out.x_enh;
            break;
    }
    const Mat& cond = prior.kind == PriorKind::masked ? out.x_enh : x_mel.frames;
    Tensor<float> cond_t = grid_to_tensor(cond);

    VelocityFn<float> vfn = [&](const Mat& x, double t) {
        Tensor<float> xt = grid_to_tensor(x);
        Tensor<float> v = velocity_forward<float>(nullptr, xt, cond_t, t, d_t, flow_params);
        return tensor_to_grid(v);
    };
    out.trajectory = euler_integrate(x0, steps, vfn);
    out.y_hat.frames = out.trajectory.back();
    out.y_hat.config = x_mel.config;
    return out;
}

}  // namespace m2f
