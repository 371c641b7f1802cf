#pragma once

// Finite-difference gradient suite over the whole fixed op set. Shared by the
// tensor unit tests and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "mask2flow/gradcheck.hpp"
#include "mask2flow/masknet.hpp"
#include "mask2flow/rng.hpp"
#include "mask2flow/tensor.hpp"

namespace gradsuite {

using m2f::Rng;
using m2f::Tape;
using m2f::Tensor;

struct OpResult {
    std::string op;
    double worst_rel_err = 0.0;
    bool pass = true;
};

using TensorD = Tensor<double>;
using TapeD = Tape<double>;

// Loss = mean(out * R) with a fixed random R so every output entry gets a
// distinct gradient signal.
inline TensorD weighted_mean(TapeD* tape, const TensorD& out, Rng& rng) {
    TensorD r = TensorD::randn(out.shape(), rng);
    return m2f::mean_all(tape, m2f::mul(tape, out, r));
}

struct OpCase {
    std::string name;
    // builds params + loss function for one random instance
    std::function<void(Rng&, std::vector<std::pair<std::string, TensorD>>&,
                       std::function<TensorD(TapeD*)>&)>
        make;
};

inline std::vector<OpCase> op_cases() {
    using Params = std::vector<std::pair<std::string, TensorD>>;
    using Fn = std::function<TensorD(TapeD*)>;
    std::vector<OpCase> cases;

    auto rand_shape2 = [](Rng& rng) {
        return m2f::Shape{1 + static_cast<int>(rng.uniform_int(4)), 1 + static_cast<int>(rng.uniform_int(5))};
    };

    auto binary_case = [&](const std::string& name, auto opfn) {
        return OpCase{name, [opfn, rand_shape2](Rng& rng, Params& params, Fn& f) {
                          auto shape = rand_shape2(rng);
                          TensorD a = TensorD::randn(shape, rng, 1.0, true);
                          TensorD b = TensorD::randn(shape, rng, 1.0, true);
                          Rng wr(rng.next_u64());
                          params = {{"a", a}, {"b", b}};
                          f = [=](TapeD* t) mutable {
                              Rng w = wr;
                              return weighted_mean(t, opfn(t, a, b), w);
                          };
                      }};
    };
    cases.push_back(binary_case("add", [](TapeD* t, const TensorD& a, const TensorD& b) { return m2f::add(t, a, b); }));
    cases.push_back(binary_case("subtract", [](TapeD* t, const TensorD& a, const TensorD& b) { return m2f::sub(t, a, b); }));
    cases.push_back(binary_case("multiply", [](TapeD* t, const TensorD& a, const TensorD& b) { return m2f::mul(t, a, b); }));

    auto unary_case = [&](const std::string& name, auto opfn) {
        return OpCase{name, [opfn, rand_shape2](Rng& rng, Params& params, Fn& f) {
                          TensorD x = TensorD::randn(rand_shape2(rng), rng, 1.0, true);
                          Rng wr(rng.next_u64());
                          params = {{"x", x}};
                          f = [=](TapeD* t) mutable {
                              Rng w = wr;
                              return weighted_mean(t, opfn(t, x), w);
                          };
                      }};
    };
    cases.push_back(unary_case("sigmoid", [](TapeD* t, const TensorD& x) { return m2f::sigmoid(t, x); }));
    cases.push_back(unary_case("tanh", [](TapeD* t, const TensorD& x) { return m2f::tanh(t, x); }));
    cases.push_back(unary_case("leaky_relu", [](TapeD* t, const TensorD& x) { return m2f::leaky_relu(t, x, 0.01); }));
    cases.push_back(unary_case("softmax", [](TapeD* t, const TensorD& x) { return m2f::softmax(t, x); }));
    cases.push_back(unary_case("transpose", [](TapeD* t, const TensorD& x) { return m2f::transpose(t, x); }));
    cases.push_back(unary_case("reverse_rows", [](TapeD* t, const TensorD& x) { return m2f::reverse_rows(t, x); }));
    cases.push_back(unary_case("scalar_scale", [](TapeD* t, const TensorD& x) { return m2f::affine_const(t, x, 1.7, -0.3); }));
    cases.push_back(unary_case("mean", [](TapeD* t, const TensorD& x) { return m2f::mean_all(t, x); }));
    cases.push_back(unary_case("sum", [](TapeD* t, const TensorD& x) { return m2f::sum_all(t, x); }));

    cases.push_back({"matmul", [](Rng& rng, Params& params, Fn& f) {
                         const int m = 1 + static_cast<int>(rng.uniform_int(4));
                         const int k = 1 + static_cast<int>(rng.uniform_int(4));
                         const int n = 1 + static_cast<int>(rng.uniform_int(4));
                         TensorD a = TensorD::randn({m, k}, rng, 1.0, true);
                         TensorD b = TensorD::randn({k, n}, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"a", a}, {"b", b}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::matmul(t, a, b), w);
                         };
                     }});

    cases.push_back({"conv2d", [](Rng& rng, Params& params, Fn& f) {
                         const int cin = 1 + static_cast<int>(rng.uniform_int(2));
                         const int cout = 1 + static_cast<int>(rng.uniform_int(2));
                         const int h = 3 + static_cast<int>(rng.uniform_int(3));
                         const int w = 3 + static_cast<int>(rng.uniform_int(3));
                         const int k = rng.uniform_int(2) == 0 ? 1 : 3;
                         const int pad = static_cast<int>(rng.uniform_int(2));
                         TensorD x = TensorD::randn({cin, h, w}, rng, 1.0, true);
                         TensorD kw = TensorD::randn({cout, cin, k, k}, rng, 0.5, true);
                         TensorD b = TensorD::randn({cout}, rng, 0.5, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}, {"w", kw}, {"b", b}};
                         f = [=](TapeD* t) mutable {
                             Rng wgen = wr;
                             return weighted_mean(t, m2f::conv2d(t, x, kw, b, pad), wgen);
                         };
                     }});

    auto bn_case = [](bool train) {
        return [train](Rng& rng, Params& params, Fn& f) {
            const int c = 1 + static_cast<int>(rng.uniform_int(3));
            const int h = 2 + static_cast<int>(rng.uniform_int(3));
            const int w = 2 + static_cast<int>(rng.uniform_int(3));
            TensorD x = TensorD::randn({c, h, w}, rng, 1.0, true);
            TensorD gamma = TensorD::rand_uniform({c}, rng, 0.5, 1.5, true);
            TensorD beta = TensorD::randn({c}, rng, 0.5, true);
            TensorD rmean = TensorD::randn({c}, rng, 0.3);
            TensorD rvar = TensorD::rand_uniform({c}, rng, 0.2, 2.0);
            Rng wr(rng.next_u64());
            params = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
            f = [=](TapeD* t) mutable {
                Rng w2 = wr;
                TensorD rm = rmean.clone(), rv = rvar.clone();
                return weighted_mean(t, m2f::batch_norm(t, x, gamma, beta, rm, rv, train), w2);
            };
        };
    };
    cases.push_back({"batch_norm_train", bn_case(true)});
    cases.push_back({"batch_norm_eval", bn_case(false)});

    cases.push_back({"layer_norm", [](Rng& rng, Params& params, Fn& f) {
                         const int rows = 1 + static_cast<int>(rng.uniform_int(4));
                         const int cols = 2 + static_cast<int>(rng.uniform_int(6));
                         TensorD x = TensorD::randn({rows, cols}, rng, 1.0, true);
                         TensorD gamma = TensorD::rand_uniform({cols}, rng, 0.5, 1.5, true);
                         TensorD beta = TensorD::randn({cols}, rng, 0.5, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::layer_norm(t, x, gamma, beta), w);
                         };
                     }});

    cases.push_back({"concat", [](Rng& rng, Params& params, Fn& f) {
                         const int axis = static_cast<int>(rng.uniform_int(2));
                         const int rows = 1 + static_cast<int>(rng.uniform_int(3));
                         const int cols = 1 + static_cast<int>(rng.uniform_int(3));
                         TensorD a = TensorD::randn({rows, cols}, rng, 1.0, true);
                         m2f::Shape bshape = axis == 0 ? m2f::Shape{2, cols} : m2f::Shape{rows, 2};
                         TensorD b = TensorD::randn(bshape, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"a", a}, {"b", b}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::concat(t, axis, {a, b}), w);
                         };
                     }});

    cases.push_back({"slice", [](Rng& rng, Params& params, Fn& f) {
                         const int rows = 2 + static_cast<int>(rng.uniform_int(4));
                         const int cols = 2 + static_cast<int>(rng.uniform_int(4));
                         TensorD x = TensorD::randn({rows, cols}, rng, 1.0, true);
                         const int r0 = static_cast<int>(rng.uniform_int(rows - 1));
                         const int c0 = static_cast<int>(rng.uniform_int(cols - 1));
                         Rng wr(rng.next_u64());
                         params = {{"x", x}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::slice(t, x, r0, rows, c0, cols), w);
                         };
                     }});

    cases.push_back({"reshape", [](Rng& rng, Params& params, Fn& f) {
                         const int rows = 1 + static_cast<int>(rng.uniform_int(3));
                         const int cols = 2 * (1 + static_cast<int>(rng.uniform_int(3)));
                         TensorD x = TensorD::randn({rows, cols}, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::reshape(t, x, {rows * cols / 2, 2}), w);
                         };
                     }});

    cases.push_back({"tile_rows", [](Rng& rng, Params& params, Fn& f) {
                         const int fdim = 1 + static_cast<int>(rng.uniform_int(5));
                         const int rows = 1 + static_cast<int>(rng.uniform_int(4));
                         TensorD v = TensorD::randn({fdim}, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"v", v}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::tile_rows(t, v, rows), w);
                         };
                     }});

    cases.push_back({"flatten_chw", [](Rng& rng, Params& params, Fn& f) {
                         const int c = 1 + static_cast<int>(rng.uniform_int(3));
                         const int h = 1 + static_cast<int>(rng.uniform_int(3));
                         const int w = 1 + static_cast<int>(rng.uniform_int(3));
                         TensorD x = TensorD::randn({c, h, w}, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}};
                         f = [=](TapeD* t) mutable {
                             Rng wgen = wr;
                             return weighted_mean(t, m2f::flatten_chw(t, x), wgen);
                         };
                     }});

    cases.push_back({"apply_log_mask", [rand_shape2](Rng& rng, Params& params, Fn& f) {
                         auto shape = rand_shape2(rng);
                         TensorD x = TensorD::randn(shape, rng, 1.0, true);
                         // keep away from the clamp so the check stays differentiable
                         TensorD m = TensorD::rand_uniform(shape, rng, 0.1, 0.95, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}, {"m", m}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::apply_mask(t, x, m), w);
                         };
                     }});

    cases.push_back({"rope_rotate", [](Rng& rng, Params& params, Fn& f) {
                         const int head_dim = 2 * (1 + static_cast<int>(rng.uniform_int(3)));
                         const int heads = 1 + static_cast<int>(rng.uniform_int(3));
                         const int rows = 1 + static_cast<int>(rng.uniform_int(5));
                         TensorD x = TensorD::randn({rows, heads * head_dim}, rng, 1.0, true);
                         Rng wr(rng.next_u64());
                         params = {{"x", x}};
                         f = [=](TapeD* t) mutable {
                             Rng w = wr;
                             return weighted_mean(t, m2f::rope_rotate(t, x, head_dim), w);
                         };
                     }});

    return cases;
}

inline std::vector<OpResult> run_op_suite(int seeds_per_op, double eps = 1e-5, double tol = 1e-4) {
    std::vector<OpResult> results;
    for (const auto& c : op_cases()) {
        OpResult res{c.name, 0.0, true};
        for (int s = 0; s < seeds_per_op; ++s) {
            Rng rng(0x9000 + 77771ull * s + m2f::fnv1a64(c.name.data(), c.name.size()));
            std::vector<std::pair<std::string, TensorD>> params;
            std::function<TensorD(TapeD*)> f;
            c.make(rng, params, f);
            auto report = m2f::grad_check(f, params, eps, tol);
            res.worst_rel_err = std::max(res.worst_rel_err, report.max_rel_err);
            res.pass = res.pass && report.pass;
        }
        results.push_back(res);
    }
    return results;
}

}  // namespace gradsuite
