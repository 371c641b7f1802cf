#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2f {

// Plain row-major matrix for signal-level data (spectrogram frames, flow
// states). Network internals use Tensor; conversions happen at the boundary.
template <typename T>
struct GridMat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    GridMat() = default;
    GridMat(int r, int c, T fill = T(0)) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    bool same_shape(const GridMat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

using Mat = GridMat<float>;
using MatD = GridMat<double>;

template <typename T>
void require_same_shape(const GridMat<T>& a, const GridMat<T>& b, const std::string& who) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(who + ": shape mismatch " + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols));
    }
}

template <typename T, typename U>
GridMat<T> grid_cast(const GridMat<U>& m) {
    GridMat<T> out(m.rows, m.cols);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<T>(m.v[i]);
    return out;
}

}  // namespace m2f
