#pragma once

#include <string>
#include <vector>

#include "mask2flow/params.hpp"
#include "mask2flow/rng.hpp"
#include "mask2flow/tensor.hpp"

// Velocity network v(x_t, t, d): a transformer over mel frames (one token per
// frame) with RoPE attention and AdaLN-Zero conditioning. The conditioning
// vector c = MLP(t) + W_d d modulates every block through (gamma, beta,
// alpha) triples, one triple per sub-layer; all modulation projections and
// the output head start at zero, so a fresh network is an exact identity in
// its block stack and predicts zero velocity.

namespace m2f {

struct DiTConfig {
    int blocks = 2;      // 9 at full scale
    int hidden = 64;     // 768 at full scale
    int heads = 4;       // 8 at full scale
    int mel_bands = 40;  // 80 at full scale
    int embed_dim = 32;  // 512 at full scale
    int mlp_ratio = 4;
    int cond_dim = 0;  // 0 -> hidden / 4
    int time_freqs = 128;
    double rope_base = 10000.0;

    static DiTConfig toy() { return {}; }
    static DiTConfig full_scale() {
        DiTConfig c;
        c.blocks = 9;
        c.hidden = 768;
        c.heads = 8;
        c.mel_bands = 80;
        c.embed_dim = 512;
        return c;
    }

    int cond() const { return cond_dim > 0 ? cond_dim : hidden / 4; }
    int head_dim() const { return hidden / heads; }
    int input_width() const { return 2 * mel_bands + embed_dim; }

    void validate() const {
        if (blocks < 1 || hidden < 1 || heads < 1 || mel_bands < 1 || embed_dim < 1)
            throw std::invalid_argument("DiTConfig: all sizes must be positive");
        if (hidden % heads != 0)
            throw std::invalid_argument("DiTConfig: hidden must be divisible by heads");
        if (head_dim() % 2 != 0)
            throw std::invalid_argument("DiTConfig: head_dim must be even for RoPE pairs");
        if (cond() < 1) throw std::invalid_argument("DiTConfig: conditioning width must be positive");
    }

    bool operator==(const DiTConfig&) const = default;
};

inline int64_t dit_param_count(const DiTConfig& cfg) {
    const int64_t h = cfg.hidden, c = cfg.cond(), b = cfg.mel_bands, e = cfg.embed_dim;
    const int64_t sin_dim = 2LL * cfg.time_freqs;
    int64_t n = 0;
    n += sin_dim * c + c + c * c + c;          // timestep MLP
    n += e * c + c;                            // W_d
    n += (2 * b + e) * h + h;                  // input projection
    const int64_t mlp_hidden = h * cfg.mlp_ratio;
    int64_t per_block = 0;
    per_block += h * 3 * h + 3 * h;            // qkv
    per_block += h * h + h;                    // attention out
    per_block += h * mlp_hidden + mlp_hidden + mlp_hidden * h + h;  // feed-forward
    per_block += c * 6 * h + 6 * h;            // AdaLN modulation
    n += per_block * cfg.blocks;
    n += c * 2 * h + 2 * h;                    // final modulated norm
    n += h * b + b;                            // output projection
    return n;
}

template <typename T>
struct DiTParams {
    DiTConfig cfg;

    Tensor<T> t_w1, t_b1, t_w2, t_b2;  // timestep MLP
    Tensor<T> wd, wd_b;                // speaker projection
    Tensor<T> in_w, in_b;

    struct Block {
        Tensor<T> qkv_w, qkv_b;
        Tensor<T> ao_w, ao_b;
        Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        Tensor<T> mod_w, mod_b;  // -> (gamma1, beta1, alpha1, gamma2, beta2, alpha2), zero-init
    };
    std::vector<Block> blocks;

    Tensor<T> final_mod_w, final_mod_b;  // -> (gamma, beta), zero-init
    Tensor<T> out_w, out_b;              // zero-init: initial velocity is exactly 0

    static DiTParams init(const DiTConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed ^ 0xd17ull);
        DiTParams p;
        p.cfg = cfg;
        const int h = cfg.hidden, c = cfg.cond();
        const int sin_dim = 2 * cfg.time_freqs;
        auto w = [&](Shape s) { return Tensor<T>::randn(s, rng, 0.02, true); };
        auto zeros = [&](Shape s) { return Tensor<T>(s, T(0), true); };

        p.t_w1 = w({sin_dim, c});
        p.t_b1 = zeros({c});
        p.t_w2 = w({c, c});
        p.t_b2 = zeros({c});
        p.wd = w({cfg.embed_dim, c});
        p.wd_b = zeros({c});
        p.in_w = w({cfg.input_width(), h});
        p.in_b = zeros({h});
        for (int i = 0; i < cfg.blocks; ++i) {
            Block blk;
            blk.qkv_w = w({h, 3 * h});
            blk.qkv_b = zeros({3 * h});
            blk.ao_w = w({h, h});
            blk.ao_b = zeros({h});
            blk.mlp_w1 = w({h, h * cfg.mlp_ratio});
            blk.mlp_b1 = zeros({h * cfg.mlp_ratio});
            blk.mlp_w2 = w({h * cfg.mlp_ratio, h});
            blk.mlp_b2 = zeros({h});
            blk.mod_w = zeros({c, 6 * h});
            blk.mod_b = zeros({6 * h});
            p.blocks.push_back(std::move(blk));
        }
        p.final_mod_w = zeros({c, 2 * h});
        p.final_mod_b = zeros({2 * h});
        p.out_w = zeros({h, cfg.mel_bands});
        p.out_b = zeros({cfg.mel_bands});
        return p;
    }

    std::vector<ParamRef<T>> refs() {
        std::vector<ParamRef<T>> out;
        out.push_back({"t_mlp.w1", &t_w1, true});
        out.push_back({"t_mlp.b1", &t_b1, true});
        out.push_back({"t_mlp.w2", &t_w2, true});
        out.push_back({"t_mlp.b2", &t_b2, true});
        out.push_back({"wd.w", &wd, true});
        out.push_back({"wd.b", &wd_b, true});
        out.push_back({"in.w", &in_w, true});
        out.push_back({"in.b", &in_b, true});
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string pre = "block" + std::to_string(i) + ".";
            out.push_back({pre + "qkv_w", &blocks[i].qkv_w, true});
            out.push_back({pre + "qkv_b", &blocks[i].qkv_b, true});
            out.push_back({pre + "ao_w", &blocks[i].ao_w, true});
            out.push_back({pre + "ao_b", &blocks[i].ao_b, true});
            out.push_back({pre + "mlp_w1", &blocks[i].mlp_w1, true});
            out.push_back({pre + "mlp_b1", &blocks[i].mlp_b1, true});
            out.push_back({pre + "mlp_w2", &blocks[i].mlp_w2, true});
            out.push_back({pre + "mlp_b2", &blocks[i].mlp_b2, true});
            out.push_back({pre + "mod_w", &blocks[i].mod_w, true});
            out.push_back({pre + "mod_b", &blocks[i].mod_b, true});
        }
        out.push_back({"final_mod.w", &final_mod_w, true});
        out.push_back({"final_mod.b", &final_mod_b, true});
        out.push_back({"out.w", &out_w, true});
        out.push_back({"out.b", &out_b, true});
        return out;
    }
};

// Sinusoidal embedding of t over geometrically spaced frequencies, then a
// 2-layer MLP to the conditioning width.
template <typename T>
Tensor<T> timestep_embed(Tape<T>* tape, double t, DiTParams<T>& params) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("timestep_embed: t must be in [0,1], got " + std::to_string(t));
    const int freqs = params.cfg.time_freqs;
    Tensor<T> e({1, 2 * freqs}, T(0));
    for (int i = 0; i < freqs; ++i) {
        const double omega = std::pow(10000.0, static_cast<double>(i) / (freqs - 1));
        e.data()[i] = static_cast<T>(std::sin(t * omega));
        e.data()[freqs + i] = static_cast<T>(std::cos(t * omega));
    }
    Tensor<T> h = linear(tape, e, params.t_w1, params.t_b1);
    h = silu(tape, h);
    return linear(tape, h, params.t_w2, params.t_b2);
}

// c = MLP(t) + W_d d
template <typename T>
Tensor<T> adaln_condition(Tape<T>* tape, double t, const Tensor<T>& d, DiTParams<T>& params) {
    Tensor<T> te = timestep_embed(tape, t, params);
    Tensor<T> ds = d.shape().size() == 1 ? reshape(tape, d, {1, d.dim(0)}) : d;
    return add(tape, te, linear(tape, ds, params.wd, params.wd_b));
}

namespace detail {

// (1 + gamma) (.) LN(h) + beta, with gamma/beta as [1, H] rows
template <typename T>
Tensor<T> modulated_norm(Tape<T>* tape, const Tensor<T>& h, const Tensor<T>& gamma, const Tensor<T>& beta) {
    const int rows = h.dim(0);
    Tensor<T> scaled = mul(tape, layer_norm(tape, h), tile_rows(tape, affine_const(tape, gamma, 1.0, 1.0), rows));
    return add(tape, scaled, tile_rows(tape, beta, rows));
}

template <typename T>
Tensor<T> self_attention(Tape<T>* tape, const Tensor<T>& x, const typename DiTParams<T>::Block& blk,
                         const DiTConfig& cfg, const std::vector<int>* positions) {
    const int frames = x.dim(0), h = cfg.hidden, hd = cfg.head_dim();
    Tensor<T> qkv = linear(tape, x, blk.qkv_w, blk.qkv_b);
    Tensor<T> q = rope_rotate(tape, slice_cols(tape, qkv, 0, h), hd, cfg.rope_base, 0, positions);
    Tensor<T> k = rope_rotate(tape, slice_cols(tape, qkv, h, 2 * h), hd, cfg.rope_base, 0, positions);
    Tensor<T> v = slice_cols(tape, qkv, 2 * h, 3 * h);
    std::vector<Tensor<T>> ctx;
    ctx.reserve(cfg.heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int head = 0; head < cfg.heads; ++head) {
        Tensor<T> qh = slice_cols(tape, q, head * hd, (head + 1) * hd);
        Tensor<T> kh = slice_cols(tape, k, head * hd, (head + 1) * hd);
        Tensor<T> vh = slice_cols(tape, v, head * hd, (head + 1) * hd);
        Tensor<T> scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
        Tensor<T> attn = softmax(tape, scores);
        ctx.push_back(matmul(tape, attn, vh));
    }
    Tensor<T> merged = cfg.heads == 1 ? ctx[0] : concat(tape, 1, ctx);
    (void)frames;
    return linear(tape, merged, blk.ao_w, blk.ao_b);
}

}  // namespace detail

// One transformer block: the modulation is applied twice, once around
// self-attention and once around the feed-forward, with independent
// (gamma, beta, alpha) triples predicted from c.
template <typename T>
Tensor<T> dit_block(Tape<T>* tape, const Tensor<T>& h_in, const Tensor<T>& c,
                    typename DiTParams<T>::Block& blk, const DiTConfig& cfg,
                    const std::vector<int>* positions = nullptr) {
    const int hd = cfg.hidden;
    const int rows = h_in.dim(0);
    Tensor<T> mod = linear(tape, silu(tape, c), blk.mod_w, blk.mod_b);
    Tensor<T> gamma1 = slice_cols(tape, mod, 0, hd);
    Tensor<T> beta1 = slice_cols(tape, mod, hd, 2 * hd);
    Tensor<T> alpha1 = slice_cols(tape, mod, 2 * hd, 3 * hd);
    Tensor<T> gamma2 = slice_cols(tape, mod, 3 * hd, 4 * hd);
    Tensor<T> beta2 = slice_cols(tape, mod, 4 * hd, 5 * hd);
    Tensor<T> alpha2 = slice_cols(tape, mod, 5 * hd, 6 * hd);

    Tensor<T> h = h_in;
    Tensor<T> attn = detail::self_attention(tape, detail::modulated_norm(tape, h, gamma1, beta1), blk, cfg, positions);
    h = add(tape, h, mul(tape, attn, tile_rows(tape, alpha1, rows)));

    Tensor<T> ff_in = detail::modulated_norm(tape, h, gamma2, beta2);
    Tensor<T> ff = linear(tape, gelu(tape, linear(tape, ff_in, blk.mlp_w1, blk.mlp_b1)), blk.mlp_w2, blk.mlp_b2);
    return add(tape, h, mul(tape, ff, tile_rows(tape, alpha2, rows)));
}

// x_t, cond: [T, mel_bands] log-mel states; d: [1, embed_dim] or [embed_dim].
// cond carries the enhanced spectrogram for the masked prior, or whatever
// stands in for it under the other priors.
template <typename T>
Tensor<T> velocity_forward(Tape<T>* tape, const Tensor<T>& x_t, const Tensor<T>& cond, double t,
                           const Tensor<T>& d, DiTParams<T>& params,
                           const std::vector<int>* positions = nullptr) {
    const DiTConfig& cfg = params.cfg;
    detail::check_same_shape("velocity_forward", x_t, cond);
    if (x_t.dim(1) != cfg.mel_bands)
        throw std::invalid_argument("velocity_forward: " + shape_str(x_t.shape()) + " vs mel_bands " +
                                    std::to_string(cfg.mel_bands));
    if (d.numel() != cfg.embed_dim)
        throw std::invalid_argument("velocity_forward: embedding size " + std::to_string(d.numel()) +
                                    " vs config " + std::to_string(cfg.embed_dim));
    const int frames = x_t.dim(0);
    Tensor<T> ds = d.shape().size() == 1 ? reshape(tape, d, {1, d.dim(0)}) : d;

    Tensor<T> input = concat(tape, 1, {x_t, cond, tile_rows(tape, ds, frames)});
    Tensor<T> h = linear(tape, input, params.in_w, params.in_b);
    Tensor<T> c = adaln_condition(tape, t, ds, params);
    for (auto& blk : params.blocks) h = dit_block(tape, h, c, blk, cfg, positions);

    Tensor<T> fm = linear(tape, silu(tape, c), params.final_mod_w, params.final_mod_b);
    Tensor<T> gamma = slice_cols(tape, fm, 0, cfg.hidden);
    Tensor<T> beta = slice_cols(tape, fm, cfg.hidden, 2 * cfg.hidden);
    h = detail::modulated_norm(tape, h, gamma, beta);
    return linear(tape, h, params.out_w, params.out_b);
}

}  // namespace m2f
