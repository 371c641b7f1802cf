#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mask2flow/rng.hpp"
#include "mask2flow/tensor.hpp"

// Central-difference verification of tape gradients. Double precision only:
// f is rebuilt per evaluation and must be deterministic.

namespace m2f {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    std::vector<GradCheckEntry> per_tensor;
};

// f(tape) must recompute the scalar loss from the current parameter values.
// When max_checks_per_tensor > 0, that many entries per tensor are sampled
// (deterministically from sample_seed); otherwise every entry is checked.
inline GradCheckReport grad_check(const std::function<Tensor<double>(Tape<double>*)>& f,
                                  std::vector<std::pair<std::string, Tensor<double>>> params,
                                  double eps = 1e-5, double tol = 1e-4,
                                  int max_checks_per_tensor = -1, uint64_t sample_seed = 0) {
    for (auto& [name, p] : params) p.zero_grad();

    Tape<double> tape;
    Tensor<double> loss = f(&tape);
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    GradCheckReport report;
    Rng rng(sample_seed ^ 0x67adc0ffeeull);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        const int64_t n = p.numel();
        std::vector<int64_t> idx;
        if (max_checks_per_tensor > 0 && n > max_checks_per_tensor) {
            for (int i = 0; i < max_checks_per_tensor; ++i) idx.push_back(static_cast<int64_t>(rng.uniform_int(n)));
        } else {
            idx.resize(n);
            for (int64_t i = 0; i < n; ++i) idx[i] = i;
        }
        GradCheckEntry entry{name, 0.0};
        for (int64_t i : idx) {
            const double orig = p.data()[i];
            p.data()[i] = orig + eps;
            const double fp = f(nullptr).item();
            p.data()[i] = orig - eps;
            const double fm = f(nullptr).item();
            p.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double ana = analytic[pi][i];
            const double denom = std::max({std::fabs(numeric), std::fabs(ana), 1e-3});
            entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(numeric - ana) / denom);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_tensor.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace m2f
