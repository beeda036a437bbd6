// Dense row-major 2-D tensor of doubles plus the handful of BLAS-like
// kernels the rest of the library is built on.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace intactvae {

using Vec = std::vector<double>;

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

struct Tensor2 {
    int rows = 0;
    int cols = 0;
    Vec data;  // length rows*cols, row-major

    Tensor2() = default;
    Tensor2(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
        check(r >= 0 && c >= 0, "Tensor2: negative shape");
    }

    static Tensor2 from_row(std::span<const double> v) {
        Tensor2 t(1, static_cast<int>(v.size()));
        std::copy(v.begin(), v.end(), t.data.begin());
        return t;
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<const double> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
    std::span<double> row(int r) {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
    size_t size() const { return data.size(); }
};

inline bool all_finite(const Tensor2& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// c = a * b. Inner loop is over b's columns so it runs down contiguous memory.
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    check(a.cols == b.rows, "matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + ")");
    Tensor2 c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// c += a^T * b, used by backward passes to avoid materializing transposes.
inline void add_matmul_at_b(Tensor2& c, const Tensor2& a, const Tensor2& b) {
    check(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols,
          "add_matmul_at_b: shape mismatch");
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + static_cast<size_t>(k) * a.cols;
        const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
            for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
}

// c += a * b^T.
inline void add_matmul_a_bt(Tensor2& c, const Tensor2& a, const Tensor2& b) {
    check(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows,
          "add_matmul_a_bt: shape mismatch");
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + static_cast<size_t>(j) * b.cols;
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

inline Tensor2 transpose(const Tensor2& a) {
    Tensor2 t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline double mean(std::span<const double> v) {
    check(!v.empty(), "mean of empty range");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

}  // namespace intactvae
