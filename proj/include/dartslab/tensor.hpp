// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dartslab {

/// Dense row-major tensor of doubles. Rank is 1 or 2 everywhere in this
/// library; scalars are shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> values)
        : shape(std::move(s)), v(std::move(values)) {
        if (static_cast<std::size_t>(count(shape)) != v.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match " + std::to_string(v.size()) + " values");
        }
    }

    static long count(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        auto n = count(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }
    static Tensor full(std::vector<int> s, double value) {
        auto n = count(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), value));
    }
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor vec(std::vector<double> values) {
        int n = static_cast<int>(values.size());
        return Tensor({n}, std::move(values));
    }
    /// Identity matrix, shape (n, n).
    static Tensor eye(int n) {
        Tensor t = zeros({n, n});
        for (int i = 0; i < n; ++i) t.v[static_cast<std::size_t>(i) * n + i] = 1.0;
        return t;
    }

    int size() const { return static_cast<int>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return rank() < 2 ? 1 : shape[1]; }

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols() + c]; }
    double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ")";
        return os.str();
    }
    std::string shape_str() const { return shape_str(shape); }
};

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace dartslab
