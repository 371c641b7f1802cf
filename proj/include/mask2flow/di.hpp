#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mask2flow/dsp.hpp"
#include "mask2flow/grid.hpp"

// Delete–insert decomposition. For a reference R and an output O in the
// LINEAR mel magnitude domain, Delta = O - R is split into deletion energy
// D = sum |Delta| over negative bins and insertion energy I = sum Delta over
// positive bins; the proportion is D/(D+I) x 100. Log-domain states are
// converted with to_linear_mel before differencing.

namespace m2f {

struct DIReport {
    double delete_energy = 0.0;
    double insert_energy = 0.0;
    double d_pct = std::numeric_limits<double>::quiet_NaN();
    double i_pct = std::numeric_limits<double>::quiet_NaN();
    bool has_pct = false;  // false when D + I == 0 (flagged, not 50/50)
    int step_index = -1;   // -1 when not a per-step report
    std::string stage_label;
    std::string condition;
    int n_items = 1;
};

template <typename T>
GridMat<T> di_delta(const GridMat<T>& reference, const GridMat<T>& output) {
    require_same_shape(reference, output, "di_delta");
    GridMat<T> delta(reference.rows, reference.cols);
    for (size_t i = 0; i < delta.v.size(); ++i) delta.v[i] = output.v[i] - reference.v[i];
    return delta;
}

namespace detail {

inline void finish_report(DIReport& r) {
    const double total = r.delete_energy + r.insert_energy;
    if (total > 0.0) {
        r.has_pct = true;
        // pure deletion / insertion come out exactly 100/0, not 100*D/D
        if (r.insert_energy == 0.0) {
            r.d_pct = 100.0;
            r.i_pct = 0.0;
        } else if (r.delete_energy == 0.0) {
            r.d_pct = 0.0;
            r.i_pct = 100.0;
        } else {
            r.d_pct = 100.0 * r.delete_energy / total;
            r.i_pct = 100.0 - r.d_pct;
        }
    } else {
        r.d_pct = std::numeric_limits<double>::quiet_NaN();
        r.i_pct = std::numeric_limits<double>::quiet_NaN();
        r.has_pct = false;
    }
}

}  // namespace detail

template <typename T>
DIReport di_proportion(const GridMat<T>& delta) {
    if (!delta.all_finite()) throw std::invalid_argument("di_proportion: non-finite delta");
    DIReport r;
    double d = 0, ins = 0;
    for (T v : delta.v) {
        const double x = static_cast<double>(v);
        if (x < 0)
            d += -x;
        else if (x > 0)
            ins += x;  // zero bins contribute to neither
    }
    r.delete_energy = d;
    r.insert_energy = ins;
    detail::finish_report(r);
    return r;
}

// Cumulative per-step reports: every state after the k-th Euler step is
// compared, in the linear domain, against the original mixture. A length-1
// trajectory yields a single report for its only state.
template <typename T>
std::vector<DIReport> di_per_step(const std::vector<GridMat<T>>& trajectory_log,
                                  const GridMat<T>& mixture_log) {
    if (trajectory_log.empty()) throw std::invalid_argument("di_per_step: empty trajectory");
    const GridMat<T> ref_lin = to_linear_mel_t(mixture_log);
    std::vector<DIReport> reports;
    const size_t first = trajectory_log.size() == 1 ? 0 : 1;
    for (size_t k = first; k < trajectory_log.size(); ++k) {
        require_same_shape(trajectory_log[k], mixture_log, "di_per_step");
        DIReport r = di_proportion(di_delta(ref_lin, to_linear_mel_t(trajectory_log[k])));
        r.step_index = static_cast<int>(k);
        reports.push_back(std::move(r));
    }
    return reports;
}

// One stage-table row: (reference, output) pairs in the LINEAR domain,
// averaged over the dataset. Percentages are computed from the mean energies.
struct StagePairBatch {
    std::string stage_label;
    std::string condition;
    std::vector<std::pair<const Mat*, const Mat*>> items;  // (reference, output)
};

inline DIReport di_aggregate(const StagePairBatch& batch) {
    if (batch.items.empty()) throw std::invalid_argument("di_aggregate: no items for " + batch.stage_label);
    DIReport r;
    r.stage_label = batch.stage_label;
    r.condition = batch.condition;
    r.n_items = static_cast<int>(batch.items.size());
    for (const auto& [ref, out] : batch.items) {
        DIReport item = di_proportion(di_delta(*ref, *out));
        r.delete_energy += item.delete_energy;
        r.insert_energy += item.insert_energy;
    }
    r.delete_energy /= r.n_items;
    r.insert_energy /= r.n_items;
    detail::finish_report(r);
    return r;
}

inline std::vector<DIReport> di_stage_table(const std::vector<StagePairBatch>& batches) {
    std::vector<DIReport> rows;
    rows.reserve(batches.size());
    for (const auto& b : batches) rows.push_back(di_aggregate(b));
    return rows;
}

inline std::string di_reports_csv(const std::vector<DIReport>& reports) {
    std::ostringstream os;
    os << "stage,condition,step,D,I,d_pct,i_pct,n_items\n";
    os.precision(10);
    for (const auto& r : reports) {
        os << r.stage_label << "," << r.condition << ",";
        if (r.step_index >= 0) os << r.step_index;
        os << "," << r.delete_energy << "," << r.insert_energy << ",";
        if (r.has_pct)
            os << r.d_pct << "," << r.i_pct;
        else
            os << ",";
        os << "," << r.n_items << "\n";
    }
    return os.str();
}

inline nlohmann::json di_reports_json(const std::vector<DIReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json j;
        j["stage"] = r.stage_label;
        j["condition"] = r.condition;
        if (r.step_index >= 0)
            j["step"] = r.step_index;
        else
            j["step"] = nullptr;
        j["D"] = r.delete_energy;
        j["I"] = r.insert_energy;
        if (r.has_pct) {
            j["d_pct"] = r.d_pct;
            j["i_pct"] = r.i_pct;
        } else {
            j["d_pct"] = nullptr;
            j["i_pct"] = nullptr;
        }
        j["n_items"] = r.n_items;
        arr.push_back(j);
    }
    return arr;
}

}  // namespace m2f
