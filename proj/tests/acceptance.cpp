// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance [--criteria 1,2,5] [--workdir DIR]
//
// Criteria 6-8 train toy pipelines and take minutes; the rest complete in
// seconds. Exit code 0 iff every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradsuite.hpp"
#include "mask2flow/checkpoint.hpp"
#include "mask2flow/cli.hpp"
#include "mask2flow/config.hpp"
#include "mask2flow/data.hpp"
#include "mask2flow/di.hpp"
#include "mask2flow/metrics.hpp"
#include "mask2flow/mixture.hpp"
#include "mask2flow/train.hpp"

using namespace m2f;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

// ---------------------------------------------------------------------------
// shared toy pipeline used by the trend criteria (6-8)
// ---------------------------------------------------------------------------

struct ToySizes {
    int mel = 24;
    double chunk_s = 0.6;
    int embed_dim = 16;
    int speakers = 16;  // small recurring pool: the desk-scale stand-in for in-domain test speakers
};

TrainSetup toy_setup(Stage stage, uint64_t seed, int max_steps, PriorKind prior) {
    ToySizes sz;
    TrainSetup s;
    s.frontend.mel_bands = sz.mel;
    s.embed.embed_dim = sz.embed_dim;
    s.mask.conv_layers = 4;
    s.mask.conv_channels = 8;
    s.mask.lstm_hidden = 32;
    s.mask.embed_dim = sz.embed_dim;
    s.mask.mel_bands = sz.mel;
    s.dit.blocks = 2;
    s.dit.hidden = 48;
    s.dit.heads = 4;
    s.dit.mel_bands = sz.mel;
    s.dit.embed_dim = sz.embed_dim;
    s.dit.cond_dim = 12;
    s.train.stage = stage;
    s.train.seed = seed;
    s.train.max_steps = max_steps;
    s.train.batch_size = 2;
    s.train.grad_accum = 1;
    s.train.lr = stage == Stage::mask ? 2e-3 : 5e-4;
    s.train.warmup_steps = 100;
    s.train.ema_decay = 0.99;
    s.train.chunk_seconds = sz.chunk_s;
    s.train.prior = prior;
    s.train.eval_interval = 0;  // identical budgets: no early stop
    s.train.early_stop = false;
    s.train.holdout_fraction = 0.1;
    return s;
}

struct EvalSet {
    Manifest manifest;
    std::vector<DataItem> items;
};

// features for a fresh evaluation set under the toy frontend
EvalSet make_eval_set(const std::string& dir, int n, uint64_t seed) {
    ToySizes sz;
    EvalSet out;
    fs::remove_all(dir);
    out.manifest = generate_dataset(n, Condition::additive, seed, dir,
                                    GenOptions{.duration_s = sz.chunk_s, .num_speakers = sz.speakers});
    FrontendConfig fe;
    fe.mel_bands = sz.mel;
    EmbedConfig ec;
    ec.embed_dim = sz.embed_dim;
    out.items = load_items(out.manifest, fe, ec, sz.chunk_s);
    return out;
}

struct TrainedPipeline {
    LoadedMaskModel mask;
    LoadedFlowModel flow;
    std::string mask_path, flow_path;
};

TrainedPipeline train_toy_pipeline(const std::string& workdir, const Manifest& data, uint64_t seed,
                                   PriorKind prior, int mask_steps, int flow_steps) {
    TrainedPipeline out;
    out.mask_path = workdir + "/mask_" + std::to_string(seed) + ".m2f";
    out.flow_path = workdir + "/flow_" + prior_name(prior) + "_" + std::to_string(seed) + ".m2f";
    if (prior == PriorKind::masked) {
        TrainSetup ms = toy_setup(Stage::mask, seed, mask_steps, prior);
        train_stage(ms, data, out.mask_path);
        out.mask = load_mask_model(out.mask_path);
    }
    TrainSetup fsu = toy_setup(Stage::flow, seed ^ 0xf10aull, flow_steps, prior);
    fsu.mask_checkpoint = prior == PriorKind::masked ? out.mask_path : "";
    train_stage(fsu, data, out.flow_path);
    out.flow = load_flow_model(out.flow_path);
    return out;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

Outcome criterion1_gradients() {
    const auto start = std::chrono::steady_clock::now();
    double worst_op = 0, worst_net = 0;
    bool ok = true;

    auto op_results = gradsuite::run_op_suite(20, 1e-5, 1e-4);
    for (const auto& r : op_results) {
        worst_op = std::max(worst_op, r.worst_rel_err);
        ok = ok && r.pass;
    }

    // full mask network at the library toy config, 20 seeds
    MaskNetConfig mc;  // toy defaults: 4 conv / 8 ch / 2x32 / 32 / 40
    for (int s = 0; s < 20 && ok; ++s) {
        auto params = MaskNetParams<double>::init(mc, 1000 + s);
        Rng rng(2000 + s);
        using TensorD = Tensor<double>;
        TensorD x = TensorD::randn({3, mc.mel_bands}, rng, 0.5, true);
        TensorD d = TensorD::randn({1, mc.embed_dim}, rng, 0.5);
        TensorD y = TensorD::randn({3, mc.mel_bands}, rng, 0.5);
        auto f = [&](Tape<double>* t) {
            TensorD m = mask_forward(t, x, d, params, true);
            return mask_loss(t, apply_mask(t, x, m), y);
        };
        std::vector<std::pair<std::string, TensorD>> checked{{"x", x}};
        for (auto& r : params.refs())
            if (r.trainable) checked.push_back({r.name, *r.tensor});
        auto report = grad_check(f, checked, 1e-5, 1e-3, 3, 77 + s);
        worst_net = std::max(worst_net, report.max_rel_err);
        ok = ok && report.pass;
    }

    // full velocity network at the library toy config, 20 seeds
    DiTConfig dc;  // toy defaults: 2 blocks / 64 / 4 heads / 40 / 32
    for (int s = 0; s < 20 && ok; ++s) {
        auto params = DiTParams<double>::init(dc, 3000 + s);
        Rng wr(4000 + s);
        for (auto& r : params.refs())
            for (auto& w : r.tensor->data()) w += 0.05 * wr.normal();
        Rng rng(5000 + s);
        using TensorD = Tensor<double>;
        TensorD x = TensorD::randn({4, dc.mel_bands}, rng, 0.5, true);
        TensorD cond = TensorD::randn({4, dc.mel_bands}, rng, 0.5);
        TensorD d = TensorD::randn({1, dc.embed_dim}, rng, 0.5);
        TensorD u = TensorD::randn({4, dc.mel_bands}, rng);
        const double t_val = rng.uniform();
        auto f = [&](Tape<double>* t) {
            return flow_loss(t, velocity_forward(t, x, cond, t_val, d, params), u);
        };
        std::vector<std::pair<std::string, TensorD>> checked{{"x", x}};
        for (auto& r : params.refs()) checked.push_back({r.name, *r.tensor});
        auto report = grad_check(f, checked, 1e-5, 1e-3, 3, 99 + s);
        worst_net = std::max(worst_net, report.max_rel_err);
        ok = ok && report.pass;
    }

    const double sec = elapsed_s(start);
    ok = ok && sec < 120.0;
    return {ok, "ops max rel err " + fmt(worst_op) + ", networks " + fmt(worst_net) + ", " + fmt(sec) + " s (< 120)"};
}

Outcome criterion2_identity() {
    DiTConfig dc;  // toy defaults
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        auto params = DiTParams<double>::init(dc, 100 + trial);
        Rng rng(500 + trial);
        Tensor<double> h = Tensor<double>::randn({6, dc.hidden}, rng, 1.0 + rng.uniform());
        Tensor<double> c = Tensor<double>::randn({1, dc.cond()}, rng);
        for (auto& blk : params.blocks) {
            Tensor<double> out = dit_block<double>(nullptr, h, c, blk, dc);
            ok = ok && std::memcmp(out.data().data(), h.data().data(), sizeof(double) * h.numel()) == 0;
        }
    }
    return {ok, "50 random inputs, every fresh block bit-exactly identity"};
}

Outcome criterion3_flow_exactness() {
    bool ok = true;
    std::string detail;

    // endpoints
    Rng rng(42);
    MatD x_mix(5, 7), x_enh(5, 7), y(5, 7);
    for (auto* m : {&x_mix, &x_enh, &y})
        for (auto& v : m->v) v = rng.normal();
    for (PriorKind kind : {PriorKind::gaussian, PriorKind::mixture, PriorKind::masked}) {
        Rng r0(7), r1(7);
        auto s0 = make_trajectory_sample(FlowPrior{kind, 1.0}, x_mix, &x_enh, y, 0.0, r0);
        auto s1 = make_trajectory_sample(FlowPrior{kind, 1.0}, x_mix, &x_enh, y, 1.0, r1);
        ok = ok && std::memcmp(s0.x_t.v.data(), s0.x0.v.data(), sizeof(double) * s0.x0.v.size()) == 0;
        ok = ok && std::memcmp(s1.x_t.v.data(), y.v.data(), sizeof(double) * y.v.size()) == 0;
    }

    // constant-field step-count invariance
    MatD c(5, 7);
    for (auto& v : c.v) v = rng.normal();
    auto field = [&](const MatD&, double) { return c; };
    auto s1 = euler_integrate<double>(x_mix, 1, field);
    double worst = 0;
    for (int steps : {2, 10, 100}) {
        auto sk = euler_integrate<double>(x_mix, steps, field);
        for (size_t i = 0; i < x_mix.v.size(); ++i)
            worst = std::max(worst, std::fabs(sk.back().v[i] - s1.back().v[i]));
    }
    ok = ok && worst < 1e-12;

    // untrained single-step composition through the real two-stage path
    GenOptions opt;
    opt.duration_s = 0.5;
    MixtureSample item = generate_item(Condition::additive, 777, 0, opt);
    FrontendConfig fe;
    fe.mel_bands = 40;
    MelSpectrogram x = log_mel(item.mixture, fe);
    SpeakerEmbedding d = embed(item.reference, 16000);
    MaskNetConfig mc;
    auto mask_params = MaskNetParams<float>::init(mc, 5);
    DiTConfig dc;
    auto flow_params = DiTParams<float>::init(dc, 6);
    InferResult res = tse_infer(x, d, &mask_params, flow_params, FlowPrior{PriorKind::masked}, 1);
    ok = ok && std::memcmp(res.y_hat.frames.v.data(), res.x_enh.v.data(),
                           sizeof(float) * res.x_enh.v.size()) == 0;

    return {ok, "endpoints exact, constant-field drift " + fmt(worst) + " (< 1e-12), untrained 1-step == X_enh"};
}

Outcome criterion4_di_oracle() {
    Rng rng(31);
    bool ok = true;
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int rows = 1 + static_cast<int>(rng.uniform_int(8));
        const int cols = 1 + static_cast<int>(rng.uniform_int(8));
        MatD delta(rows, cols);
        for (auto& v : delta.v) {
            v = rng.normal() * (1.0 + rng.uniform() * 10.0);
            if (rng.uniform() < 0.08) v = 0.0;
        }
        auto r = di_proportion(delta);
        double d = 0, ins = 0, abs_sum = 0;
        for (double v : delta.v) {
            if (v < 0) d += -v;
            if (v > 0) ins += v;
            abs_sum += std::fabs(v);
        }
        const double denom = std::max(1.0, d + ins);
        worst = std::max({worst, std::fabs(r.delete_energy - d) / denom,
                          std::fabs(r.insert_energy - ins) / denom,
                          std::fabs(r.delete_energy + r.insert_energy - abs_sum) / denom});
        MatD neg(rows, cols);
        for (size_t i = 0; i < delta.v.size(); ++i) neg.v[i] = -delta.v[i];
        auto rn = di_proportion(neg);
        ok = ok && rn.delete_energy == r.insert_energy && rn.insert_energy == r.delete_energy;
        const double s = rng.uniform(0.25, 4.0);
        MatD scaled(rows, cols);
        for (size_t i = 0; i < delta.v.size(); ++i) scaled.v[i] = s * delta.v[i];
        auto rs = di_proportion(scaled);
        worst = std::max({worst, std::fabs(rs.delete_energy - s * r.delete_energy) / denom,
                          std::fabs(rs.insert_energy - s * r.insert_energy) / denom});
        if (r.has_pct && rs.has_pct) worst = std::max(worst, std::fabs(rs.d_pct - r.d_pct) / 100.0);
    }
    ok = ok && worst < 1e-9;
    return {ok, "1000 matrices, worst deviation " + fmt(worst) + " (< 1e-9)"};
}

Outcome criterion5_mask_row(const std::string& workdir) {
    // any checkpoint, trained or untrained, must yield exactly 100.0 / 0.0
    GenOptions opt;
    opt.duration_s = 0.5;
    FrontendConfig fe;
    fe.mel_bands = 24;
    EmbedConfig ec;
    ec.embed_dim = 16;
    MaskNetConfig mc;
    mc.mel_bands = 24;
    mc.embed_dim = 16;
    mc.lstm_hidden = 16;

    const std::string dir = workdir + "/c5_data";
    fs::remove_all(dir);
    Manifest manifest = generate_dataset(6, Condition::additive, 901, dir, opt);
    auto items = load_items(manifest, fe, ec);

    auto stage_row = [&](MaskNetParams<float>& params) {
        std::vector<Mat> lin_x, lin_e;
        for (const auto& it : items) {
            NormalizedMel norm = l2_normalize(MelSpectrogram{it.x_log, fe});
            Tensor<float> d_t = Tensor<float>::from_data({1, it.d.dim()}, it.d.vector);
            Tensor<float> m = mask_forward<float>(nullptr, grid_to_tensor(norm.spec.frames), d_t, params, false);
            lin_x.push_back(to_linear_mel(it.x_log));
            lin_e.push_back(to_linear_mel(apply_mask(it.x_log, tensor_to_grid(m))));
        }
        StagePairBatch b{"Mixture->Masked", "additive", {}};
        for (size_t i = 0; i < lin_x.size(); ++i) b.items.push_back({&lin_x[i], &lin_e[i]});
        return di_aggregate(b);
    };

    auto untrained = MaskNetParams<float>::init(mc, 3);
    DIReport r0 = stage_row(untrained);

    TrainSetup ts = toy_setup(Stage::mask, 11, 60, PriorKind::masked);
    const std::string ckpt = workdir + "/c5_mask.m2f";
    train_stage(ts, manifest, ckpt);
    LoadedMaskModel trained = load_mask_model(ckpt);
    DIReport r1 = stage_row(trained.params);

    const bool ok = r0.has_pct && r0.d_pct == 100.0 && r0.i_pct == 0.0 && r0.insert_energy == 0.0 &&
                    r1.has_pct && r1.d_pct == 100.0 && r1.i_pct == 0.0 && r1.insert_energy == 0.0;
    return {ok, "untrained " + fmt(r0.d_pct) + "/" + fmt(r0.i_pct) + ", trained " + fmt(r1.d_pct) + "/" +
                    fmt(r1.i_pct) + " (exact)"};
}

struct C6Result {
    double i_pct = 0;
    double mse_yhat = 0, mse_xenh = 0;
};

C6Result run_c6_seed(const std::string& workdir, const Manifest& train_data, const EvalSet& eval_set,
                     uint64_t seed, int mask_steps, int flow_steps) {
    TrainedPipeline p = train_toy_pipeline(workdir, train_data, seed, PriorKind::masked, mask_steps, flow_steps);
    std::vector<Mat> lin_enh, lin_yhat;
    C6Result out;
    int n = 0;
    for (const auto& it : eval_set.items) {
        MelSpectrogram x{it.x_log, p.flow.frontend};
        InferResult res = tse_infer(x, it.d, &p.mask.params, p.flow.params, FlowPrior{PriorKind::masked}, 1);
        lin_enh.push_back(to_linear_mel(res.x_enh));
        lin_yhat.push_back(to_linear_mel(res.y_hat.frames));
        out.mse_yhat += mel_metrics(res.y_hat.frames, it.y_log).mel_mse;
        out.mse_xenh += mel_metrics(res.x_enh, it.y_log).mel_mse;
        ++n;
    }
    out.mse_yhat /= n;
    out.mse_xenh /= n;
    StagePairBatch b{"Masked->Mask2Flow", "additive", {}};
    for (size_t i = 0; i < lin_enh.size(); ++i) b.items.push_back({&lin_enh[i], &lin_yhat[i]});
    DIReport r = di_aggregate(b);
    out.i_pct = r.i_pct;
    return out;
}

Outcome criterion6_two_stage_trend(const std::string& workdir, int mask_steps, int flow_steps) {
    const auto start = std::chrono::steady_clock::now();
    const std::string data_dir = workdir + "/c6_train";
    fs::remove_all(data_dir);
    Manifest train_data = generate_dataset(64, Condition::additive, 606, data_dir,
                                           GenOptions{.duration_s = ToySizes{}.chunk_s,
                                                      .num_speakers = ToySizes{}.speakers});
    EvalSet eval_set = make_eval_set(workdir + "/c6_eval", 12, 607);

    std::vector<double> i_pcts, improve;
    for (uint64_t seed : {21ull, 22ull, 23ull}) {
        C6Result r = run_c6_seed(workdir, train_data, eval_set, seed, mask_steps, flow_steps);
        i_pcts.push_back(r.i_pct);
        improve.push_back(r.mse_xenh - r.mse_yhat);
        std::cout << "  [c6 seed " << seed << "] Masked->Mask2Flow i_pct " << fmt(r.i_pct)
                  << ", mel-MSE yhat " << fmt(r.mse_yhat) << " vs x_enh " << fmt(r.mse_xenh) << "\n";
    }
    const double med = median(i_pcts);
    const double med_improve = median(improve);
    const double sec = elapsed_s(start);
    const bool ok = med > 50.0 && med_improve > 0.0 && sec < 1800.0;
    return {ok, "median i_pct " + fmt(med) + " (> 50), flow improves mask by " + fmt(med_improve) +
                    " mel-MSE, " + fmt(sec) + " s (< 1800)"};
}

Outcome criterion7_prior_ordering(const std::string& workdir, int flow_steps) {
    const auto start = std::chrono::steady_clock::now();
    const std::string data_dir = workdir + "/c7_train";
    fs::remove_all(data_dir);
    Manifest train_data = generate_dataset(64, Condition::additive, 707, data_dir,
                                           GenOptions{.duration_s = ToySizes{}.chunk_s,
                                                      .num_speakers = ToySizes{}.speakers});
    EvalSet eval_set = make_eval_set(workdir + "/c7_eval", 10, 708);

    // one shared mask per seed so "masked" trains against a fixed stage 1
    auto eval_prior = [&](const TrainedPipeline& p, PriorKind prior, uint64_t noise_seed) {
        double acc = 0;
        for (const auto& it : eval_set.items) {
            MelSpectrogram x{it.x_log, p.flow.frontend};
            MaskNetParams<float>* mp =
                prior == PriorKind::masked ? const_cast<MaskNetParams<float>*>(&p.mask.params) : nullptr;
            InferResult res = tse_infer(x, it.d, mp, const_cast<DiTParams<float>&>(p.flow.params),
                                        FlowPrior{prior, 1.0}, 8, noise_seed ^ it.seed);
            acc += mel_metrics(res.y_hat.frames, it.y_log).mel_mse;
        }
        return acc / eval_set.items.size();
    };

    std::vector<double> masked_v, mixture_v, gaussian_v;
    const int mask_steps = 500;
    for (uint64_t seed : {41ull, 42ull, 43ull, 44ull, 45ull}) {
        for (PriorKind prior : {PriorKind::masked, PriorKind::mixture, PriorKind::gaussian}) {
            TrainedPipeline p = train_toy_pipeline(workdir, train_data, seed, prior, mask_steps, flow_steps);
            const double mse = eval_prior(p, prior, seed);
            if (prior == PriorKind::masked) masked_v.push_back(mse);
            if (prior == PriorKind::mixture) mixture_v.push_back(mse);
            if (prior == PriorKind::gaussian) gaussian_v.push_back(mse);
            std::cout << "  [c7 seed " << seed << "] " << prior_name(prior) << " held-out mel-MSE "
                      << fmt(mse) << "\n";
        }
    }
    const double m_masked = median(masked_v), m_mixture = median(mixture_v), m_gauss = median(gaussian_v);
    const double sec = elapsed_s(start);
    // ties broken toward pass within 5% relative
    const bool ok = m_masked <= 1.05 * m_mixture && m_mixture <= 1.05 * m_gauss && sec < 5400.0;
    return {ok, "median mel-MSE masked " + fmt(m_masked) + " <= mixture " + fmt(m_mixture) + " <= gaussian " +
                    fmt(m_gauss) + " (5% tie rule), " + fmt(sec) + " s (< 5400)"};
}

Outcome criterion8_gaussian_profile(const std::string& workdir, int flow_steps) {
    const auto start = std::chrono::steady_clock::now();
    const std::string data_dir = workdir + "/c8_train";
    fs::remove_all(data_dir);
    Manifest train_data = generate_dataset(64, Condition::additive, 808, data_dir,
                                           GenOptions{.duration_s = ToySizes{}.chunk_s,
                                                      .num_speakers = ToySizes{}.speakers});
    EvalSet eval_set = make_eval_set(workdir + "/c8_eval", 10, 809);

    // per-seed, per-step aggregated insert share over the eval set
    std::vector<std::vector<double>> i_by_step;  // [seed][step 1..8]
    for (uint64_t seed : {61ull, 62ull, 63ull}) {
        TrainedPipeline p = train_toy_pipeline(workdir, train_data, seed, PriorKind::gaussian, 0, flow_steps);
        std::vector<double> d_energy(8, 0.0), i_energy(8, 0.0);
        for (const auto& it : eval_set.items) {
            MelSpectrogram x{it.x_log, p.flow.frontend};
            InferResult res = tse_infer(x, it.d, nullptr, p.flow.params, FlowPrior{PriorKind::gaussian}, 8,
                                        seed ^ it.seed);
            auto reports = di_per_step(res.trajectory, it.x_log);
            for (int k = 0; k < 8; ++k) {
                d_energy[k] += reports[k].delete_energy;
                i_energy[k] += reports[k].insert_energy;
            }
        }
        std::vector<double> row(8);
        for (int k = 0; k < 8; ++k) row[k] = 100.0 * i_energy[k] / (d_energy[k] + i_energy[k]);
        std::cout << "  [c8 seed " << seed << "] cumulative i_pct by step:";
        for (double v : row) std::cout << " " << fmt(v);
        std::cout << "\n";
        i_by_step.push_back(row);
    }
    std::vector<double> med(8);
    for (int k = 0; k < 8; ++k)
        med[k] = median({i_by_step[0][k], i_by_step[1][k], i_by_step[2][k]});
    bool monotone = true;
    for (int k = 1; k < 5; ++k) monotone = monotone && med[k] < med[k - 1];
    const double sec = elapsed_s(start);
    const bool ok = med[0] > 90.0 && monotone && sec < 1800.0;
    std::string steps_str;
    for (int k = 0; k < 5; ++k) steps_str += (k ? " " : "") + fmt(med[k]);
    return {ok, "median step-1 i_pct " + fmt(med[0]) + " (> 90), steps 1-5 [" + steps_str +
                    "] monotone decreasing, " + fmt(sec) + " s"};
}

Outcome criterion9_simulator() {
    bool ok = true;
    double worst_snr = 0;
    Rng rng(99);
    auto spk_a = SyntheticSpeaker::from_id(1);
    auto spk_b = SyntheticSpeaker::from_id(2);
    auto y = synth_utterance(spk_a, 0.5, 1);
    auto z = synth_utterance(spk_b, 0.5, 2);
    for (int trial = 0; trial < 1000; ++trial) {
        const double snr = rng.uniform(1.0, 10.0);
        auto r = mix_at_snr(y, z, snr);
        worst_snr = std::max(worst_snr, std::fabs(measure_snr_db(y, r.interference_scaled) - snr));
    }
    ok = ok && worst_snr < 0.01;

    for (int i = 0; i < 50; ++i) {
        MixtureSample s = generate_item(Condition::clean, 1234, i, GenOptions{.duration_s = 0.5});
        ok = ok && s.mixture.size() == s.target.size() &&
             std::memcmp(s.mixture.data(), s.target.data(), sizeof(float) * s.target.size()) == 0;
        for (float v : s.interference) ok = ok && v == 0.0f;
    }

    // determinism: byte-identical regeneration
    const std::string d1 = (fs::temp_directory_path() / "m2f_acc_det1").string();
    const std::string d2 = (fs::temp_directory_path() / "m2f_acc_det2").string();
    fs::remove_all(d1);
    fs::remove_all(d2);
    generate_dataset(4, Condition::reverb, 13, d1, GenOptions{.duration_s = 0.5});
    generate_dataset(4, Condition::reverb, 13, d2, GenOptions{.duration_s = 0.5});
    for (const auto& entry : fs::directory_iterator(d1)) {
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(fs::path(d2) / entry.path().filename(), std::ios::binary);
        std::string sa(std::istreambuf_iterator<char>(a), {});
        std::string sb(std::istreambuf_iterator<char>(b), {});
        ok = ok && sa == sb;
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
    return {ok, "worst SNR error " + fmt(worst_snr) + " dB (< 0.01), clean bitwise, regeneration byte-identical"};
}

Outcome criterion10_training_mechanics(const std::string& workdir) {
    bool ok = true;
    std::string detail;

    // AdamW two-step recurrence, double, 1e-12
    {
        using TensorD = Tensor<double>;
        TensorD p = TensorD::from_data({1}, {0.7}, true);
        std::vector<ParamRef<double>> refs{{"p", &p, true}};
        AdamW<double> opt(refs);
        const double lr = 0.05, wd = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double m = 0, v = 0, want = 0.7;
        for (int t = 1; t <= 2; ++t) {
            p.zero_grad();
            p.grad()[0] = 1.0;
            opt.step(refs, lr, wd);
            m = b1 * m + (1 - b1);
            v = b2 * v + (1 - b2);
            want = want - lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps) -
                   lr * wd * want;
        }
        ok = ok && std::fabs(p.data()[0] - want) < 1e-12;
    }
    // EMA closed form, 1e-12
    {
        using TensorD = Tensor<double>;
        TensorD p = TensorD::from_data({1}, {0.25}, true);
        std::vector<ParamRef<double>> refs{{"p", &p, true}};
        EmaState<double> ema = EmaState<double>::init(refs);
        p.data()[0] = 2.0;
        for (int i = 0; i < 23; ++i) ema.update(refs, 0.97);
        const double want = 2.0 * (1 - std::pow(0.97, 23)) + 0.25 * std::pow(0.97, 23);
        ok = ok && std::fabs(ema.shadow()[0].data()[0] - want) < 1e-12;
    }
    // warmup schedule exact
    ok = ok && lr_schedule(0, 2e-4, 10000) == 0.0 && lr_schedule(10000, 2e-4, 10000) == 2e-4 &&
         lr_schedule(5000, 2e-4, 10000) == 1e-4;

    // gradient accumulation equivalence and bit-identical reruns
    const std::string data_dir = workdir + "/c10_data";
    fs::remove_all(data_dir);
    Manifest data = generate_dataset(6, Condition::additive, 1010, data_dir, GenOptions{.duration_s = 0.5});
    TrainSetup big = toy_setup(Stage::mask, 5, 1, PriorKind::masked);
    big.frontend.mel_bands = 12;
    big.embed.embed_dim = 16;
    big.mask.mel_bands = 12;
    big.mask.lstm_hidden = 8;
    big.mask.embed_dim = 16;
    big.train.chunk_seconds = 0.5;
    big.train.batch_size = 4;
    big.train.grad_accum = 1;
    big.train.holdout_fraction = 0.34;
    TrainSetup accum = big;
    accum.train.batch_size = 2;
    accum.train.grad_accum = 2;
    const std::string o1 = workdir + "/c10_big.m2f";
    const std::string o2 = workdir + "/c10_accum.m2f";
    train_stage(big, data, o1);
    train_stage(accum, data, o2);
    auto pa = MaskNetParams<float>::init(big.mask, 1);
    auto pb = MaskNetParams<float>::init(big.mask, 1);
    load_model_params(load_checkpoint(o1), pa.refs(), false);
    load_model_params(load_checkpoint(o2), pb.refs(), false);
    double worst = 0;
    auto ra = pa.refs(), rb = pb.refs();
    for (size_t i = 0; i < ra.size(); ++i)
        for (int64_t j = 0; j < ra[i].tensor->numel(); ++j) {
            const double a = ra[i].tensor->data()[j], b = rb[i].tensor->data()[j];
            worst = std::max(worst, std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)}));
        }
    ok = ok && worst < 1e-5;

    TrainSetup rerun = big;
    rerun.train.max_steps = 6;
    const std::string r1 = workdir + "/c10_r1.m2f";
    const std::string r2 = workdir + "/c10_r2.m2f";
    train_stage(rerun, data, r1);
    train_stage(rerun, data, r2);
    std::ifstream f1(r1, std::ios::binary), f2(r2, std::ios::binary);
    std::string b1(std::istreambuf_iterator<char>(f1), {});
    std::string b2(std::istreambuf_iterator<char>(f2), {});
    ok = ok && !b1.empty() && b1 == b2;

    return {ok, "AdamW/EMA/warmup oracles to 1e-12, grad-accum diff " + fmt(worst) +
                    " (< 1e-5), reruns bit-identical"};
}

Outcome criterion11_param_counts() {
    const int64_t mask_n = masknet_param_count(MaskNetConfig::full_scale());
    const int64_t flow_n = dit_param_count(DiTConfig::full_scale());
    const bool mask_ok = std::llabs(mask_n - 12'700'000) <= static_cast<int64_t>(0.05 * 12'700'000);
    const bool flow_ok = std::llabs(flow_n - 72'600'000) <= static_cast<int64_t>(0.05 * 72'600'000);
    return {mask_ok && flow_ok,
            "mask " + std::to_string(mask_n) + " vs 12.7M (" +
                fmt(100.0 * (mask_n - 12'700'000) / 12'700'000.0) + "%), flow " + std::to_string(flow_n) +
                " vs 72.6M (" + fmt(100.0 * (flow_n - 72'600'000) / 72'600'000.0) + "%)"};
}

Outcome criterion12_rtf(const std::string& workdir) {
    const std::string data_dir = workdir + "/c12_data";
    fs::remove_all(data_dir);
    ToySizes sz;
    Manifest manifest = generate_dataset(4, Condition::additive, 1212, data_dir,
                                         GenOptions{.duration_s = sz.chunk_s});
    FrontendConfig fe;
    fe.mel_bands = sz.mel;
    EmbedConfig ec;
    ec.embed_dim = sz.embed_dim;
    auto items = load_items(manifest, fe, ec);

    TrainSetup s = toy_setup(Stage::mask, 1, 0, PriorKind::masked);
    auto mask_params = MaskNetParams<float>::init(s.mask, 1);
    auto flow_params = DiTParams<float>::init(s.dit, 2);

    FlowPrior prior{PriorKind::masked, 1.0};
    RtfResult mask_only = bench_rtf(items, &mask_params, nullptr, prior, 1, BenchMode::mask_only, 9, 3);
    RtfResult one_step = bench_rtf(items, &mask_params, &flow_params, prior, 1, BenchMode::mask_and_flow, 9, 3);
    RtfResult eight_step = bench_rtf(items, &mask_params, &flow_params, prior, 8, BenchMode::mask_and_flow, 9, 3);
    const bool ok = mask_only.median < one_step.median && one_step.median < eight_step.median;
    return {ok, "median RTF mask " + fmt(mask_only.median) + " < mask+flow(1) " + fmt(one_step.median) +
                    " < mask+flow(8) " + fmt(eight_step.median)};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    std::string workdir = (fs::temp_directory_path() / "m2f_acceptance").string();
    int c6_mask_steps = 500, c6_flow_steps = 5000;
    int c7_flow_steps = 350;
    int c8_flow_steps = 2200;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criteria" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) wanted.push_back(std::stoi(tok));
        } else if (a == "--workdir" && i + 1 < argc) {
            workdir = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--criteria 1,2,...] [--workdir DIR]\n";
            return 1;
        }
    }
    if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    fs::create_directories(workdir);

    struct Entry {
        int id;
        std::string title;
        std::function<Outcome()> run;
    };
    std::vector<Entry> entries = {
        {1, "gradient suite (ops + both toy networks, 20 seeds)", [&] { return criterion1_gradients(); }},
        {2, "AdaLN-Zero identity at initialization", [&] { return criterion2_identity(); }},
        {3, "flow-path exactness", [&] { return criterion3_flow_exactness(); }},
        {4, "D/I oracle equivalence", [&] { return criterion4_di_oracle(); }},
        {5, "stage table Mixture->Masked = 100.0/0.0", [&] { return criterion5_mask_row(workdir); }},
        {6, "two-stage D/I trend (Masked->Mask2Flow insert-dominant)",
         [&] { return criterion6_two_stage_trend(workdir, c6_mask_steps, c6_flow_steps); }},
        {7, "prior ordering (masked <= mixture <= gaussian)",
         [&] { return criterion7_prior_ordering(workdir, c7_flow_steps); }},
        {8, "gaussian-prior cumulative D/I profile",
         [&] { return criterion8_gaussian_profile(workdir, c8_flow_steps); }},
        {9, "mixture simulator (SNR, clean bitwise, determinism)", [&] { return criterion9_simulator(); }},
        {10, "training mechanics (AdamW/EMA/warmup, accumulation, reruns)",
         [&] { return criterion10_training_mechanics(workdir); }},
        {11, "full-scale parameter counts within +-5%", [&] { return criterion11_param_counts(); }},
        {12, "RTF ordering mask < mask+flow(1) < mask+flow(8)", [&] { return criterion12_rtf(workdir); }},
    };

    bool all_pass = true;
    for (const auto& e : entries) {
        if (std::find(wanted.begin(), wanted.end(), e.id) == wanted.end()) continue;
        Outcome o;
        try {
            o = e.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << e.id << ": " << e.title << " — "
                  << o.detail << "\n";
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
