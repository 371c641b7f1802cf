#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mask2flow/rng.hpp"

// Minimal dense tensor library with reverse-mode autodiff over the fixed
// operator set the two networks need. No broadcasting (scalar scale aside):
// operand shapes must match exactly, which catches wiring bugs early.
//
// A Tensor is a cheap handle onto shared storage. Ops take an optional Tape;
// when a tape is given and any input requires grad, the op pushes a backward
// closure. Tape::backward replays the closures in reverse recording order
// (reverse topological order by construction) and then clears the tape.

namespace m2f {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive extent in " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
            throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t(shape, T(0), requires_grad);
        for (T& x : t.node_->data) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
        Tensor t(shape, T(0), requires_grad);
        for (T& x : t.node_->data) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[i]; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }

    // Lazily allocated, zero-filled.
    std::span<T> grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
        return node_->grad;
    }
    std::span<const T> grad() const {
        static const std::vector<T> empty;
        return node_->grad.empty() ? std::span<const T>(empty) : std::span<const T>(node_->grad);
    }

    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), T(0));
    }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return node_->data[0];
    }

    bool same_storage(const Tensor& o) const { return node_ == o.node_; }

    Tensor clone() const {
        Tensor t;
        t.node_ = std::make_shared<Node>(*node_);
        return t;
    }

private:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
};

template <typename T>
class Tape {
public:
    void record(std::function<void()> backward) { ops_.push_back(std::move(backward)); }

    size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss) = 1, replays recorded ops in reverse, clears.
    void backward(Tensor<T> loss) {
        if (loss.numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        if (ops_.empty()) throw std::invalid_argument("backward: tape is empty");
        loss.grad()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        clear();
    }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename T>
inline void check_finite(const char* op, const Tensor<T>& t) {
    for (T x : t.data()) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw std::runtime_error(std::string(op) + ": non-finite value in output");
        }
    }
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

template <typename T>
inline void check_2d(const char* op, const Tensor<T>& a) {
    if (a.shape().size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> out(a.shape(), T(0), a.requires_grad() || b.requires_grad());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    detail::check_finite("add", out);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> out(a.shape(), T(0), a.requires_grad() || b.requires_grad());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    detail::check_finite("sub", out);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

// elementwise product
template <typename T>
Tensor<T> mul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> out(a.shape(), T(0), a.requires_grad() || b.requires_grad());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    detail::check_finite("mul", out);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out]() mutable {
            auto g = out.grad();
            auto ad = a.data(), bd = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
            }
        });
    }
    return out;
}

// x * mul_c + add_c with scalar constants (the one sanctioned broadcast)
template <typename T>
Tensor<T> affine_const(Tape<T>* tape, Tensor<T> a, double mul_c, double add_c = 0.0) {
    Tensor<T> out(a.shape(), T(0), a.requires_grad());
    auto ad = a.data();
    auto od = out.data();
    const T m = static_cast<T>(mul_c), c = static_cast<T>(add_c);
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * m + c;
    detail::check_finite("affine_const", out);
    if (tape && out.requires_grad()) {
        tape->record([a, out, m]() mutable {
            auto g = out.grad();
            auto ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m;
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, Tensor<T> a, double c) {
    return affine_const(tape, a, c, 0.0);
}

// ---------------------------------------------------------------------------
// matmul / conv2d
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]; ikj order so the inner loop is contiguous.
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* Ai = A + static_cast<size_t>(i) * k;
        T* Ci = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T a = Ai[p];
            if (a == T(0)) continue;
            const T* Bp = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B^T where Bt is [n,k]
template <typename T>
void matmul_bt_acc(const T* A, const T* Bt, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* Ai = A + static_cast<size_t>(i) * k;
        T* Ci = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* Bj = Bt + static_cast<size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
            Ci[j] += acc;
        }
    }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n]
template <typename T>
void matmul_at_acc(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* Ai = A + static_cast<size_t>(i) * k;
        const T* Bi = B + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T a = Ai[p];
            if (a == T(0)) continue;
            T* Cp = C + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Cp[j] += a * Bi[j];
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    detail::check_2d("matmul", a);
    detail::check_2d("matmul", b);
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n}, T(0), a.requires_grad() || b.requires_grad());
    detail::matmul_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    detail::check_finite("matmul", out);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out, m, k, n]() mutable {
            const T* g = out.grad().data();
            if (a.requires_grad()) {
                // dA = G * B^T  (B stored [k,n], so use bt kernel with Bt := B reinterpreted)
                detail::matmul_bt_acc(g, b.data().data(), a.grad().data(), m, n, k);
            }
            if (b.requires_grad()) {
                // dB = A^T * G
                detail::matmul_at_acc(a.data().data(), g, b.grad().data(), m, k, n);
            }
        });
    }
    return out;
}

// 2-D convolution, stride 1. x: [Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout].
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, Tensor<T> x, Tensor<T> w, Tensor<T> bias, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4) {
        throw std::invalid_argument("conv2d: expected x [Cin,H,W] and w [Cout,Cin,kh,kw], got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) {
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    }
    if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != cout)) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()));
    }
    const int oh = h + 2 * pad - kh + 1;
    const int ow = wd + 2 * pad - kw + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

    bool rg = x.requires_grad() || w.requires_grad() || (bias.defined() && bias.requires_grad());
    Tensor<T> out({cout, oh, ow}, T(0), rg);
    const T* xd = x.data().data();
    const T* wdp = w.data().data();
    T* od = out.data().data();
    for (int co = 0; co < cout; ++co) {
        const T b = bias.defined() ? bias.data()[co] : T(0);
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                T acc = b;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int u = 0; u < kh; ++u) {
                        const int y = i + u - pad;
                        if (y < 0 || y >= h) continue;
                        const T* xrow = xd + (static_cast<size_t>(ci) * h + y) * wd;
                        const T* wrow = wdp + ((static_cast<size_t>(co) * cin + ci) * kh + u) * kw;
                        for (int v = 0; v < kw; ++v) {
                            const int xx = j + v - pad;
                            if (xx < 0 || xx >= wd) continue;
                            acc += xrow[xx] * wrow[v];
                        }
                    }
                }
                od[(static_cast<size_t>(co) * oh + i) * ow + j] = acc;
            }
        }
    }
    detail::check_finite("conv2d", out);
    if (tape && rg) {
        tape->record([x, w, bias, out, cin, h, wd, cout, kh, kw, oh, ow, pad]() mutable {
            const T* g = out.grad().data();
            const T* xd = x.data().data();
            const T* wdp = w.data().data();
            T* gx = x.requires_grad() ? x.grad().data() : nullptr;
            T* gw = w.requires_grad() ? w.grad().data() : nullptr;
            T* gb = (bias.defined() && bias.requires_grad()) ? bias.grad().data() : nullptr;
            for (int co = 0; co < cout; ++co) {
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j) {
                        const T go = g[(static_cast<size_t>(co) * oh + i) * ow + j];
                        if (gb) gb[co] += go;
                        if (go == T(0)) continue;
                        for (int ci = 0; ci < cin; ++ci) {
                            for (int u = 0; u < kh; ++u) {
                                const int y = i + u - pad;
                                if (y < 0 || y >= h) continue;
                                for (int v = 0; v < kw; ++v) {
                                    const int xx = j + v - pad;
                                    if (xx < 0 || xx >= wd) continue;
                                    const size_t xi = (static_cast<size_t>(ci) * h + y) * wd + xx;
                                    const size_t wi = ((static_cast<size_t>(co) * cin + ci) * kh + u) * kw + v;
                                    if (gx) gx[xi] += go * wdp[wi];
                                    if (gw) gw[wi] += go * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Per-channel batch normalization over a [C, ...] tensor. Training mode uses
// batch statistics and updates the running buffers (momentum 0.1 toward the
// batch value); eval mode is a frozen affine map from the running buffers.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, Tensor<T> x, Tensor<T> gamma, Tensor<T> beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                     double momentum = 0.1, double eps = 1e-5) {
    if (x.shape().size() < 2) throw std::invalid_argument("batch_norm: need [C,...], got " + shape_str(x.shape()));
    const int c = x.dim(0);
    const int64_t per = x.numel() / c;
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
        throw std::invalid_argument("batch_norm: affine/stat size mismatch for C=" + std::to_string(c));
    }
    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor<T> out(x.shape(), T(0), rg);

    std::vector<T> mean(c), invstd(c);
    if (train) {
        for (int ch = 0; ch < c; ++ch) {
            const T* xd = x.data().data() + ch * per;
            double m = 0;
            for (int64_t i = 0; i < per; ++i) m += xd[i];
            m /= static_cast<double>(per);
            double var = 0;
            for (int64_t i = 0; i < per; ++i) {
                const double d = xd[i] - m;
                var += d * d;
            }
            var /= static_cast<double>(per);
            mean[ch] = static_cast<T>(m);
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
            running_mean.data()[ch] = static_cast<T>((1.0 - momentum) * running_mean.data()[ch] + momentum * m);
            running_var.data()[ch] = static_cast<T>((1.0 - momentum) * running_var.data()[ch] + momentum * var);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean.data()[ch];
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ch]) + eps));
        }
    }
    for (int ch = 0; ch < c; ++ch) {
        const T* xd = x.data().data() + ch * per;
        T* od = out.data().data() + ch * per;
        const T g = gamma.data()[ch], b = beta.data()[ch], m = mean[ch], is = invstd[ch];
        for (int64_t i = 0; i < per; ++i) od[i] = (xd[i] - m) * is * g + b;
    }
    detail::check_finite("batch_norm", out);

    if (tape && rg) {
        tape->record([x, gamma, beta, out, mean, invstd, c, per, train]() mutable {
            const T* g = out.grad().data();
            const T* xd = x.data().data();
            for (int ch = 0; ch < c; ++ch) {
                const T* gc = g + ch * per;
                const T* xc = xd + ch * per;
                const T m = mean[ch], is = invstd[ch], ga = gamma.data()[ch];
                double sum_g = 0, sum_gx = 0;
                for (int64_t i = 0; i < per; ++i) {
                    const double xh = (xc[i] - m) * is;
                    sum_g += gc[i];
                    sum_gx += gc[i] * xh;
                }
                if (gamma.requires_grad()) gamma.grad()[ch] += static_cast<T>(sum_gx);
                if (beta.requires_grad()) beta.grad()[ch] += static_cast<T>(sum_g);
                if (x.requires_grad()) {
                    T* gx = x.grad().data() + ch * per;
                    if (train) {
                        const double n = static_cast<double>(per);
                        for (int64_t i = 0; i < per; ++i) {
                            const double xh = (xc[i] - m) * is;
                            gx[i] += static_cast<T>(ga * is / n * (n * gc[i] - sum_g - xh * sum_gx));
                        }
                    } else {
                        for (int64_t i = 0; i < per; ++i) gx[i] += static_cast<T>(gc[i] * ga * is);
                    }
                }
            }
        });
    }
    return out;
}

namespace detail {

template <typename T>
Tensor<T> layer_norm_impl(Tape<T>* tape, Tensor<T> x, const Tensor<T>* gamma, const Tensor<T>* beta,
                          double eps) {
    check_2d("layer_norm", x);
    const int rows = x.dim(0), f = x.dim(1);
    if (gamma && (gamma->numel() != f || beta->numel() != f)) {
        throw std::invalid_argument("layer_norm: affine size mismatch for F=" + std::to_string(f));
    }
    bool rg = x.requires_grad() || (gamma && (gamma->requires_grad() || beta->requires_grad()));
    Tensor<T> out({rows, f}, T(0), rg);
    std::vector<T> means(rows), invstds(rows);
    for (int r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + static_cast<size_t>(r) * f;
        double m = 0;
        for (int i = 0; i < f; ++i) m += xr[i];
        m /= f;
        double var = 0;
        for (int i = 0; i < f; ++i) {
            const double d = xr[i] - m;
            var += d * d;
        }
        var /= f;
        means[r] = static_cast<T>(m);
        invstds[r] = static_cast<T>(1.0 / std::sqrt(var + eps));
        T* orow = out.data().data() + static_cast<size_t>(r) * f;
        for (int i = 0; i < f; ++i) {
            T xh = (xr[i] - means[r]) * invstds[r];
            orow[i] = gamma ? xh * gamma->data()[i] + beta->data()[i] : xh;
        }
    }
    check_finite("layer_norm", out);
    if (tape && rg) {
        Tensor<T> gm = gamma ? *gamma : Tensor<T>();
        Tensor<T> bt = beta ? *beta : Tensor<T>();
        tape->record([x, gm, bt, out, means, invstds, rows, f]() mutable {
            const T* g = out.grad().data();
            const T* xd = x.data().data();
            for (int r = 0; r < rows; ++r) {
                const T* gr = g + static_cast<size_t>(r) * f;
                const T* xr = xd + static_cast<size_t>(r) * f;
                const T m = means[r], is = invstds[r];
                double sum_gg = 0, sum_ggx = 0;
                for (int i = 0; i < f; ++i) {
                    const double xh = (xr[i] - m) * is;
                    const double gg = gm.defined() ? gr[i] * gm.data()[i] : gr[i];
                    sum_gg += gg;
                    sum_ggx += gg * xh;
                    if (gm.defined() && gm.requires_grad()) gm.grad()[i] += static_cast<T>(gr[i] * xh);
                    if (bt.defined() && bt.requires_grad()) bt.grad()[i] += gr[i];
                }
                if (x.requires_grad()) {
                    T* gx = x.grad().data() + static_cast<size_t>(r) * f;
                    for (int i = 0; i < f; ++i) {
                        const double xh = (xr[i] - m) * is;
                        const double gg = gm.defined() ? gr[i] * gm.data()[i] : gr[i];
                        gx[i] += static_cast<T>(is / f * (f * gg - sum_gg - xh * sum_ggx));
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, Tensor<T> x, Tensor<T> gamma, Tensor<T> beta,
                     double eps = 1e-5) {
    return detail::layer_norm_impl(tape, x, &gamma, &beta, eps);
}

// plain row normalization, no learned affine (modulation supplies it)
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, Tensor<T> x, double eps = 1e-5) {
    return detail::layer_norm_impl<T>(tape, x, nullptr, nullptr, eps);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> out(x.shape(), T(0), x.requires_grad());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xd[i]))));
    detail::check_finite("sigmoid", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out]() mutable {
            auto g = out.grad();
            auto od = out.data();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * od[i] * (T(1) - od[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> out(x.shape(), T(0), x.requires_grad());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = static_cast<T>(std::tanh(static_cast<double>(xd[i])));
    detail::check_finite("tanh", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out]() mutable {
            auto g = out.grad();
            auto od = out.data();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - od[i] * od[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, Tensor<T> x, double slope = 0.01) {
    Tensor<T> out(x.shape(), T(0), x.requires_grad());
    auto xd = x.data();
    auto od = out.data();
    const T s = static_cast<T>(slope);
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : xd[i] * s;
    detail::check_finite("leaky_relu", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out, s]() mutable {
            auto g = out.grad();
            auto xd = x.data();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xd[i] > T(0) ? T(1) : s);
        });
    }
    return out;
}

// softmax over the last axis of a 2-D tensor
template <typename T>
Tensor<T> softmax(Tape<T>* tape, Tensor<T> x) {
    detail::check_2d("softmax", x);
    const int rows = x.dim(0), f = x.dim(1);
    Tensor<T> out(x.shape(), T(0), x.requires_grad());
    for (int r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + static_cast<size_t>(r) * f;
        T* orow = out.data().data() + static_cast<size_t>(r) * f;
        T mx = xr[0];
        for (int i = 1; i < f; ++i) mx = std::max(mx, xr[i]);
        double sum = 0;
        for (int i = 0; i < f; ++i) {
            const double e = std::exp(static_cast<double>(xr[i] - mx));
            orow[i] = static_cast<T>(e);
            sum += e;
        }
        for (int i = 0; i < f; ++i) orow[i] = static_cast<T>(orow[i] / sum);
    }
    detail::check_finite("softmax", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out, rows, f]() mutable {
            const T* g = out.grad().data();
            const T* od = out.data().data();
            T* gx = x.grad().data();
            for (int r = 0; r < rows; ++r) {
                const T* gr = g + static_cast<size_t>(r) * f;
                const T* sr = od + static_cast<size_t>(r) * f;
                double dot = 0;
                for (int i = 0; i < f; ++i) dot += static_cast<double>(gr[i]) * sr[i];
                T* gxr = gx + static_cast<size_t>(r) * f;
                for (int i = 0; i < f; ++i) gxr[i] += static_cast<T>(sr[i] * (gr[i] - dot));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops (2-D unless noted)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(Tape<T>* tape, int axis, std::vector<Tensor<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) detail::check_2d("concat", p);
    int rows = parts[0].dim(0), cols = parts[0].dim(1);
    bool rg = false;
    int total = 0;
    for (const auto& p : parts) {
        rg = rg || p.requires_grad();
        if (axis == 0) {
            if (p.dim(1) != cols)
                throw std::invalid_argument("concat: column mismatch " + shape_str(p.shape()));
            total += p.dim(0);
        } else {
            if (p.dim(0) != rows)
                throw std::invalid_argument("concat: row mismatch " + shape_str(p.shape()));
            total += p.dim(1);
        }
    }
    Tensor<T> out(axis == 0 ? Shape{total, cols} : Shape{rows, total}, T(0), rg);
    if (axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
            off += p.data().size();
        }
    } else {
        int coff = 0;
        for (const auto& p : parts) {
            const int pc = p.dim(1);
            for (int r = 0; r < rows; ++r) {
                std::copy(p.data().begin() + static_cast<size_t>(r) * pc,
                          p.data().begin() + static_cast<size_t>(r + 1) * pc,
                          out.data().begin() + static_cast<size_t>(r) * total + coff);
            }
            coff += pc;
        }
    }
    if (tape && rg) {
        tape->record([parts, out, axis, rows, total]() mutable {
            const T* g = out.grad().data();
            if (axis == 0) {
                size_t off = 0;
                for (auto& p : parts) {
                    if (p.requires_grad()) {
                        auto gp = p.grad();
                        for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                    }
                    off += p.data().size();
                }
            } else {
                int coff = 0;
                for (auto& p : parts) {
                    const int pc = p.dim(1);
                    if (p.requires_grad()) {
                        auto gp = p.grad();
                        for (int r = 0; r < rows; ++r)
                            for (int ci = 0; ci < pc; ++ci)
                                gp[static_cast<size_t>(r) * pc + ci] += g[static_cast<size_t>(r) * total + coff + ci];
                    }
                    coff += pc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(Tape<T>* tape, Tensor<T> x, int r0, int r1, int c0, int c1) {
    detail::check_2d("slice", x);
    const int rows = x.dim(0), cols = x.dim(1);
    if (r0 < 0 || r1 > rows || c0 < 0 || c1 > cols || r0 >= r1 || c0 >= c1) {
        throw std::invalid_argument("slice: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                    ")x[" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                                    shape_str(x.shape()));
    }
    const int nr = r1 - r0, nc = c1 - c0;
    Tensor<T> out({nr, nc}, T(0), x.requires_grad());
    for (int r = 0; r < nr; ++r) {
        const T* src = x.data().data() + static_cast<size_t>(r0 + r) * cols + c0;
        std::copy(src, src + nc, out.data().data() + static_cast<size_t>(r) * nc);
    }
    if (tape && out.requires_grad()) {
        tape->record([x, out, r0, c0, nr, nc, cols]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (int r = 0; r < nr; ++r)
                for (int c = 0; c < nc; ++c)
                    gx[static_cast<size_t>(r0 + r) * cols + c0 + c] += g[static_cast<size_t>(r) * nc + c];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>* tape, Tensor<T> x, int r0, int r1) {
    return slice(tape, x, r0, r1, 0, x.dim(1));
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, Tensor<T> x, int c0, int c1) {
    return slice(tape, x, 0, x.dim(0), c0, c1);
}

template <typename T>
Tensor<T> transpose(Tape<T>* tape, Tensor<T> x) {
    detail::check_2d("transpose", x);
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor<T> out({cols, rows}, T(0), x.requires_grad());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out.data()[static_cast<size_t>(c) * rows + r] = x.data()[static_cast<size_t>(r) * cols + c];
    if (tape && out.requires_grad()) {
        tape->record([x, out, rows, cols]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    gx[static_cast<size_t>(r) * cols + c] += g[static_cast<size_t>(c) * rows + r];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, Tensor<T> x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    }
    Tensor<T> out(new_shape, T(0), x.requires_grad());
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    if (tape && out.requires_grad()) {
        tape->record([x, out]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// broadcast a [F] or [1,F] vector to [rows, F]
template <typename T>
Tensor<T> tile_rows(Tape<T>* tape, Tensor<T> v, int rows) {
    int f;
    if (v.shape().size() == 1) {
        f = v.dim(0);
    } else if (v.shape().size() == 2 && v.dim(0) == 1) {
        f = v.dim(1);
    } else {
        throw std::invalid_argument("tile_rows: expected [F] or [1,F], got " + shape_str(v.shape()));
    }
    Tensor<T> out({rows, f}, T(0), v.requires_grad());
    for (int r = 0; r < rows; ++r)
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<size_t>(r) * f);
    if (tape && out.requires_grad()) {
        tape->record([v, out, rows, f]() mutable {
            const T* g = out.grad().data();
            auto gv = v.grad();
            for (int r = 0; r < rows; ++r)
                for (int i = 0; i < f; ++i) gv[i] += g[static_cast<size_t>(r) * f + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reverse_rows(Tape<T>* tape, Tensor<T> x) {
    detail::check_2d("reverse_rows", x);
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor<T> out({rows, cols}, T(0), x.requires_grad());
    for (int r = 0; r < rows; ++r) {
        const T* src = x.data().data() + static_cast<size_t>(rows - 1 - r) * cols;
        std::copy(src, src + cols, out.data().data() + static_cast<size_t>(r) * cols);
    }
    if (tape && out.requires_grad()) {
        tape->record([x, out, rows, cols]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    gx[static_cast<size_t>(rows - 1 - r) * cols + c] += g[static_cast<size_t>(r) * cols + c];
        });
    }
    return out;
}

// [C,H,W] -> [H, C*W]: one row per H index, channels side by side.
// Bridges the conv stack (channel images) to the sequence model (frames).
template <typename T>
Tensor<T> flatten_chw(Tape<T>* tape, Tensor<T> x) {
    if (x.shape().size() != 3) throw std::invalid_argument("flatten_chw: expected [C,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out({h, c * w}, T(0), x.requires_grad());
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < h; ++r) {
            const T* src = x.data().data() + (static_cast<size_t>(ci) * h + r) * w;
            std::copy(src, src + w, out.data().data() + static_cast<size_t>(r) * (c * w) + static_cast<size_t>(ci) * w);
        }
    if (tape && out.requires_grad()) {
        tape->record([x, out, c, h, w]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < h; ++r)
                    for (int wi = 0; wi < w; ++wi)
                        gx[(static_cast<size_t>(ci) * h + r) * w + wi] +=
                            g[static_cast<size_t>(r) * (c * w) + static_cast<size_t>(ci) * w + wi];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> out({1}, T(0), x.requires_grad());
    double acc = 0;
    for (T v : x.data()) acc += v;
    out.data()[0] = static_cast<T>(acc);
    detail::check_finite("sum", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out]() mutable {
            const T g = out.grad()[0];
            auto gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> out({1}, T(0), x.requires_grad());
    double acc = 0;
    for (T v : x.data()) acc += v;
    const double n = static_cast<double>(x.numel());
    out.data()[0] = static_cast<T>(acc / n);
    detail::check_finite("mean", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out, n]() mutable {
            const T g = static_cast<T>(out.grad()[0] / n);
            auto gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// rotary position embedding
// ---------------------------------------------------------------------------

// Rotates query/key rows per attention head: pair j of every head is rotated
// by angle pos * base^(-2j/head_dim). The position of row r defaults to
// r + pos_offset; an explicit positions vector overrides it.
// x: [T, n_heads*head_dim].
template <typename T>
Tensor<T> rope_rotate(Tape<T>* tape, Tensor<T> x, int head_dim, double base = 10000.0,
                      int pos_offset = 0, const std::vector<int>* positions = nullptr) {
    detail::check_2d("rope_rotate", x);
    if (head_dim <= 0 || head_dim % 2 != 0) {
        throw std::invalid_argument("rope_rotate: head_dim must be positive even, got " + std::to_string(head_dim));
    }
    const int rows = x.dim(0), cols = x.dim(1);
    if (cols % head_dim != 0) {
        throw std::invalid_argument("rope_rotate: width " + std::to_string(cols) + " not divisible by head_dim " +
                                    std::to_string(head_dim));
    }
    if (positions && static_cast<int>(positions->size()) != rows) {
        throw std::invalid_argument("rope_rotate: positions size " + std::to_string(positions->size()) +
                                    " vs rows " + std::to_string(rows));
    }
    const int pairs = head_dim / 2;
    std::vector<double> inv_freq(pairs);
    for (int j = 0; j < pairs; ++j) inv_freq[j] = std::pow(base, -2.0 * j / head_dim);
    std::vector<int> pos_of(rows);
    for (int r = 0; r < rows; ++r) pos_of[r] = positions ? (*positions)[r] : r + pos_offset;

    Tensor<T> out({rows, cols}, T(0), x.requires_grad());
    auto rotate = [cols, head_dim, pairs, inv_freq, pos_of](const T* src, T* dst, int r, bool inverse) {
        const double pos = pos_of[r];
        for (int h0 = 0; h0 < cols; h0 += head_dim) {
            for (int j = 0; j < pairs; ++j) {
                const double th = pos * inv_freq[j];
                const double c = std::cos(th), s = inverse ? -std::sin(th) : std::sin(th);
                const T a = src[h0 + 2 * j], b = src[h0 + 2 * j + 1];
                dst[h0 + 2 * j] = static_cast<T>(a * c - b * s);
                dst[h0 + 2 * j + 1] = static_cast<T>(a * s + b * c);
            }
        }
    };
    for (int r = 0; r < rows; ++r)
        rotate(x.data().data() + static_cast<size_t>(r) * cols, out.data().data() + static_cast<size_t>(r) * cols, r, false);
    detail::check_finite("rope_rotate", out);
    if (tape && out.requires_grad()) {
        tape->record([x, out, rows, cols, rotate]() mutable {
            // the backward of a rotation is the inverse rotation
            std::vector<T> tmp(cols);
            for (int r = 0; r < rows; ++r) {
                rotate(out.grad().data() + static_cast<size_t>(r) * cols, tmp.data(), r, true);
                T* gx = x.grad().data() + static_cast<size_t>(r) * cols;
                for (int i = 0; i < cols; ++i) gx[i] += tmp[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// composites (built from the fixed set, so the tape handles their backward)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(Tape<T>* tape, Tensor<T> x, Tensor<T> w, Tensor<T> b) {
    Tensor<T> y = matmul(tape, x, w);
    return add(tape, y, tile_rows(tape, b, y.dim(0)));
}

template <typename T>
Tensor<T> mse(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    Tensor<T> d = sub(tape, a, b);
    return mean_all(tape, mul(tape, d, d));
}

template <typename T>
Tensor<T> silu(Tape<T>* tape, Tensor<T> x) {
    return mul(tape, x, sigmoid(tape, x));
}

// tanh-approximation GELU
template <typename T>
Tensor<T> gelu(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> x3 = mul(tape, mul(tape, x, x), x);
    Tensor<T> inner = scale(tape, add(tape, x, scale(tape, x3, 0.044715)), 0.7978845608028654);
    Tensor<T> t = affine_const(tape, tanh(tape, inner), 0.5, 0.5);
    return mul(tape, x, t);
}

}  // namespace m2f
