#pragma once

#include <cstddef>
#include <vector>

#include "tabfair/common.hpp"

namespace tabfair {

// Dense row-major matrix of doubles. Vectors are (n, 1); scalars (1, 1).
// All autodiff values, network parameters and optimizer state use this type.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, double fill)
        : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }
    static Tensor column(const std::vector<double>& data) {
        Tensor t(static_cast<int>(data.size()), 1);
        t.v = data;
        return t;
    }

    std::size_t size() const { return v.size(); }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

}  // namespace tabfair
