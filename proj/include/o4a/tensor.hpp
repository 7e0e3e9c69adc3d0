#pragma once

#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "o4a/rng.hpp"

namespace o4a {

// Dense row-major 2D tensor of doubles. Row vectors are 1 x n.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, double fill)
        : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return v.size(); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    static Tensor randn(int r, int c, double std, Rng& rng) {
        Tensor t(r, c);
        for (auto& x : t.v) x = rng.gauss(0.0, std);
        return t;
    }

    bool operator==(const Tensor& o) const {
        return rows == o.rows && cols == o.cols && v == o.v;
    }
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows) throw std::runtime_error("matmul: shape mismatch");
    Tensor out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = &a.v[static_cast<size_t>(i) * a.cols];
        double* orow = &out.v[static_cast<size_t>(i) * b.cols];
        for (int k = 0; k < a.cols; ++k) {
            double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = &b.v[static_cast<size_t>(k) * b.cols];
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

} // namespace o4a
