#pragma once

#include <string>
#include <vector>

#include "mask2flow/grid.hpp"
#include "mask2flow/params.hpp"
#include "mask2flow/rng.hpp"
#include "mask2flow/tensor.hpp"

// Stage 1: discriminative soft-mask network. Conv stack over the normalized
// log-mel image, then a stacked bidirectional LSTM with the speaker embedding
// concatenated at each layer input, post-layer LayerNorm and residual
// connections (projected where widths differ), and a sigmoid mask head.

namespace m2f {

struct MaskNetConfig {
    int conv_layers = 4;
    int conv_channels = 8;
    int lstm_layers = 2;
    int lstm_hidden = 32;  // per direction; 416 at full scale
    int embed_dim = 32;    // 512 at full scale
    int mel_bands = 40;    // 80 at full scale
    double leaky_slope = 0.01;

    static MaskNetConfig toy() { return {}; }
    static MaskNetConfig full_scale() {
        MaskNetConfig c;
        c.lstm_hidden = 416;
        c.embed_dim = 512;
        c.mel_bands = 80;
        return c;
    }

    int conv_out_width() const { return conv_channels * mel_bands; }
    int lstm_input(int layer) const {
        return layer == 0 ? conv_out_width() + embed_dim : 2 * lstm_hidden + embed_dim;
    }

    void validate() const {
        if (conv_layers < 1 || conv_channels < 1 || lstm_layers < 1 || lstm_hidden < 1 ||
            embed_dim < 1 || mel_bands < 1)
            throw std::invalid_argument("MaskNetConfig: all sizes must be positive");
    }

    bool operator==(const MaskNetConfig&) const = default;
};

inline int64_t masknet_param_count(const MaskNetConfig& cfg) {
    int64_t n = 0;
    for (int l = 0; l < cfg.conv_layers; ++l) {
        const int cin = l == 0 ? 1 : cfg.conv_channels;
        n += static_cast<int64_t>(cfg.conv_channels) * cin * 9 + cfg.conv_channels;  // kernel + bias
        n += 2 * cfg.conv_channels;                                                  // bn affine
    }
    const int h = cfg.lstm_hidden;
    for (int l = 0; l < cfg.lstm_layers; ++l) {
        const int in = cfg.lstm_input(l);
        n += 2LL * (static_cast<int64_t>(in) * 4 * h + static_cast<int64_t>(h) * 4 * h + 4 * h);
        n += static_cast<int64_t>(in) * 2 * h + 2 * h;  // residual projection
        n += 4 * h;                                     // layer norm affine
    }
    n += static_cast<int64_t>(2 * h) * cfg.mel_bands + cfg.mel_bands;  // mask head
    return n;
}

template <typename T>
struct LstmDirParams {
    Tensor<T> wx;  // [in, 4h], gate order i f g o
    Tensor<T> wh;  // [h, 4h]
    Tensor<T> b;   // [1, 4h]
};

template <typename T>
struct MaskNetParams {
    MaskNetConfig cfg;

    struct ConvLayer {
        Tensor<T> w, b;
        Tensor<T> bn_gamma, bn_beta;
        Tensor<T> bn_rmean, bn_rvar;  // buffers
    };
    std::vector<ConvLayer> conv;

    struct LstmLayer {
        LstmDirParams<T> fwd, bwd;
        Tensor<T> res_w, res_b;
        Tensor<T> ln_gamma, ln_beta;
    };
    std::vector<LstmLayer> lstm;

    Tensor<T> out_w, out_b;

    static MaskNetParams init(const MaskNetConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed ^ 0x3a5cull);
        MaskNetParams p;
        p.cfg = cfg;
        for (int l = 0; l < cfg.conv_layers; ++l) {
            const int cin = l == 0 ? 1 : cfg.conv_channels;
            typename MaskNetParams::ConvLayer c;
            c.w = Tensor<T>::randn({cfg.conv_channels, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9)), true);
            c.b = Tensor<T>({cfg.conv_channels}, T(0), true);
            c.bn_gamma = Tensor<T>({cfg.conv_channels}, T(1), true);
            c.bn_beta = Tensor<T>({cfg.conv_channels}, T(0), true);
            c.bn_rmean = Tensor<T>({cfg.conv_channels}, T(0));
            c.bn_rvar = Tensor<T>({cfg.conv_channels}, T(1));
            p.conv.push_back(std::move(c));
        }
        const int h = cfg.lstm_hidden;
        for (int l = 0; l < cfg.lstm_layers; ++l) {
            const int in = cfg.lstm_input(l);
            typename MaskNetParams::LstmLayer layer;
            const double k = 1.0 / std::sqrt(static_cast<double>(h));
            for (LstmDirParams<T>* dir : {&layer.fwd, &layer.bwd}) {
                dir->wx = Tensor<T>::rand_uniform({in, 4 * h}, rng, -k, k, true);
                dir->wh = Tensor<T>::rand_uniform({h, 4 * h}, rng, -k, k, true);
                dir->b = Tensor<T>({1, 4 * h}, T(0), true);
                for (int i = h; i < 2 * h; ++i) dir->b.data()[i] = T(1);  // forget gate bias
            }
            const double xk = std::sqrt(6.0 / (in + 2 * h));
            layer.res_w = Tensor<T>::rand_uniform({in, 2 * h}, rng, -xk, xk, true);
            layer.res_b = Tensor<T>({2 * h}, T(0), true);
            layer.ln_gamma = Tensor<T>({2 * h}, T(1), true);
            layer.ln_beta = Tensor<T>({2 * h}, T(0), true);
            p.lstm.push_back(std::move(layer));
        }
        const double ok = std::sqrt(6.0 / (2 * h + cfg.mel_bands));
        p.out_w = Tensor<T>::rand_uniform({2 * h, cfg.mel_bands}, rng, -ok, ok, true);
        p.out_b = Tensor<T>({cfg.mel_bands}, T(0), true);
        return p;
    }

    std::vector<ParamRef<T>> refs() {
        std::vector<ParamRef<T>> out;
        for (size_t l = 0; l < conv.size(); ++l) {
            const std::string pre = "conv" + std::to_string(l) + ".";
            out.push_back({pre + "w", &conv[l].w, true});
            out.push_back({pre + "b", &conv[l].b, true});
            out.push_back({pre + "bn_gamma", &conv[l].bn_gamma, true});
            out.push_back({pre + "bn_beta", &conv[l].bn_beta, true});
            out.push_back({pre + "bn_rmean", &conv[l].bn_rmean, false});
            out.push_back({pre + "bn_rvar", &conv[l].bn_rvar, false});
        }
        for (size_t l = 0; l < lstm.size(); ++l) {
            const std::string pre = "lstm" + std::to_string(l) + ".";
            out.push_back({pre + "fwd.wx", &lstm[l].fwd.wx, true});
            out.push_back({pre + "fwd.wh", &lstm[l].fwd.wh, true});
            out.push_back({pre + "fwd.b", &lstm[l].fwd.b, true});
            out.push_back({pre + "bwd.wx", &lstm[l].bwd.wx, true});
            out.push_back({pre + "bwd.wh", &lstm[l].bwd.wh, true});
            out.push_back({pre + "bwd.b", &lstm[l].bwd.b, true});
            out.push_back({pre + "res_w", &lstm[l].res_w, true});
            out.push_back({pre + "res_b", &lstm[l].res_b, true});
            out.push_back({pre + "ln_gamma", &lstm[l].ln_gamma, true});
            out.push_back({pre + "ln_beta", &lstm[l].ln_beta, true});
        }
        out.push_back({"out.w", &out_w, true});
        out.push_back({"out.b", &out_b, true});
        return out;
    }
};

namespace detail {

template <typename T>
Tensor<T> lstm_direction(Tape<T>* tape, const Tensor<T>& x, const LstmDirParams<T>& p, int hidden) {
    const int t_steps = x.dim(0);
    Tensor<T> h_prev({1, hidden}, T(0));
    Tensor<T> c_prev({1, hidden}, T(0));
    std::vector<Tensor<T>> outputs;
    outputs.reserve(t_steps);
    for (int t = 0; t < t_steps; ++t) {
        Tensor<T> x_t = slice_rows(tape, x, t, t + 1);
        Tensor<T> gates = add(tape, add(tape, matmul(tape, x_t, p.wx), matmul(tape, h_prev, p.wh)), p.b);
        Tensor<T> i_g = sigmoid(tape, slice_cols(tape, gates, 0, hidden));
        Tensor<T> f_g = sigmoid(tape, slice_cols(tape, gates, hidden, 2 * hidden));
        Tensor<T> g_g = tanh(tape, slice_cols(tape, gates, 2 * hidden, 3 * hidden));
        Tensor<T> o_g = sigmoid(tape, slice_cols(tape, gates, 3 * hidden, 4 * hidden));
        c_prev = add(tape, mul(tape, f_g, c_prev), mul(tape, i_g, g_g));
        h_prev = mul(tape, o_g, tanh(tape, c_prev));
        outputs.push_back(h_prev);
    }
    return concat(tape, 0, outputs);
}

template <typename T>
Tensor<T> bilstm(Tape<T>* tape, const Tensor<T>& x, const typename MaskNetParams<T>::LstmLayer& layer,
                 int hidden) {
    Tensor<T> fwd = lstm_direction(tape, x, layer.fwd, hidden);
    Tensor<T> rev_in = reverse_rows(tape, x);
    Tensor<T> bwd = reverse_rows(tape, lstm_direction(tape, rev_in, layer.bwd, hidden));
    return concat(tape, 1, {fwd, bwd});
}

}  // namespace detail

// x_norm: [T, mel_bands] (l2-normalized log-mel), d: [1, embed_dim] unit norm.
// Returns the soft mask, [T, mel_bands], strictly inside (0, 1).
template <typename T>
Tensor<T> mask_forward(Tape<T>* tape, const Tensor<T>& x_norm, const Tensor<T>& d,
                       MaskNetParams<T>& params, bool train) {
    const MaskNetConfig& cfg = params.cfg;
    if (x_norm.shape().size() != 2 || x_norm.dim(1) != cfg.mel_bands)
        throw std::invalid_argument("mask_forward: input " + shape_str(x_norm.shape()) + " vs mel_bands " +
                                    std::to_string(cfg.mel_bands));
    if (d.numel() != cfg.embed_dim)
        throw std::invalid_argument("mask_forward: embedding size " + std::to_string(d.numel()) +
                                    " vs config " + std::to_string(cfg.embed_dim));
    const int frames = x_norm.dim(0);

    Tensor<T> img = reshape(tape, x_norm, {1, frames, cfg.mel_bands});
    for (auto& c : params.conv) {
        img = conv2d(tape, img, c.w, c.b, 1);
        img = batch_norm(tape, img, c.bn_gamma, c.bn_beta, c.bn_rmean, c.bn_rvar, train);
        img = leaky_relu(tape, img, cfg.leaky_slope);
    }
    Tensor<T> feat = flatten_chw(tape, img);  // [T, channels * bands]

    Tensor<T> d_rows = tile_rows(tape, d, frames);
    Tensor<T> h = concat(tape, 1, {feat, d_rows});
    for (int l = 0; l < cfg.lstm_layers; ++l) {
        Tensor<T> in_l = l == 0 ? h : concat(tape, 1, {h, d_rows});
        Tensor<T> rec = detail::bilstm(tape, in_l, params.lstm[l], cfg.lstm_hidden);
        Tensor<T> res = linear(tape, in_l, params.lstm[l].res_w, params.lstm[l].res_b);
        h = layer_norm(tape, add(tape, rec, res), params.lstm[l].ln_gamma, params.lstm[l].ln_beta);
    }
    return sigmoid(tape, linear(tape, h, params.out_w, params.out_b));
}

// Mask application. The mask multiplies LINEAR mel magnitudes; states travel
// in log coordinates, so this is x + log10(M), floored at the silence floor.
// A bounded mask therefore only ever deletes energy: to_linear(X_enh) =
// max(to_linear(X) * M, floor) <= to_linear(X), which is what makes the
// masking stage register as pure deletion downstream. An identity mask is an
// exact no-op (log10(1) == 0).
inline constexpr double kMaskEps = 1e-30;     // keeps log10 finite for saturated sigmoids
inline constexpr double kLogMelFloor = -10.0; // log10 of the frontend's 1e-10 floor

inline Mat apply_mask(const Mat& x_log, const Mat& mask, double floor_log = kLogMelFloor) {
    require_same_shape(x_log, mask, "apply_mask");
    Mat out(x_log.rows, x_log.cols);
    for (size_t i = 0; i < out.v.size(); ++i) {
        const double m = std::max(static_cast<double>(mask.v[i]), kMaskEps);
        out.v[i] = static_cast<float>(std::max(static_cast<double>(x_log.v[i]) + std::log10(m), floor_log));
    }
    return out;
}

template <typename T>
Tensor<T> apply_mask(Tape<T>* tape, Tensor<T> x_log, Tensor<T> mask, double floor_log = kLogMelFloor) {
    detail::check_same_shape("apply_mask", x_log, mask);
    Tensor<T> out(x_log.shape(), T(0), x_log.requires_grad() || mask.requires_grad());
    auto xd = x_log.data();
    auto md = mask.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        const double m = std::max(static_cast<double>(md[i]), kMaskEps);
        od[i] = static_cast<T>(std::max(static_cast<double>(xd[i]) + std::log10(m), floor_log));
    }
    detail::check_finite("apply_mask", out);
    if (tape && out.requires_grad()) {
        const T fl = static_cast<T>(floor_log);
        tape->record([x_log, mask, out, fl]() mutable {
            constexpr double inv_ln10 = 0.43429448190325176;
            auto g = out.grad();
            auto od = out.data();
            auto md = mask.data();
            auto gx = x_log.requires_grad() ? x_log.grad() : std::span<T>();
            auto gm = mask.requires_grad() ? mask.grad() : std::span<T>();
            for (size_t i = 0; i < g.size(); ++i) {
                if (od[i] <= fl) continue;  // clamped: no gradient
                if (!gx.empty()) gx[i] += g[i];
                if (!gm.empty() && static_cast<double>(md[i]) > kMaskEps)
                    gm[i] += static_cast<T>(g[i] * inv_ln10 / md[i]);
            }
        });
    }
    return out;
}

// mean squared reconstruction error
template <typename T>
Tensor<T> mask_loss(Tape<T>* tape, const Tensor<T>& x_enh, const Tensor<T>& y) {
    return mse(tape, x_enh, y);
}

}  // namespace m2f
