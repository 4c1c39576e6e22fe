#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace docmmir {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    bool operator==(const Matrix&) const = default;

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <typename T>
double norm(std::span<const T> v) {
    return std::sqrt(dot(v, v));
}

inline double dot(std::span<const double> a, std::span<const double> b) { return dot<double, double>(a, b); }
inline double norm(std::span<const double> v) { return norm<double>(v); }

inline double dot(const Vector& a, const Vector& b) {
    return dot(std::span<const double>(a), std::span<const double>(b));
}

inline double norm(const Vector& v) { return norm(std::span<const double>(v)); }

}  // namespace docmmir
