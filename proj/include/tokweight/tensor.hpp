#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tokweight/error.hpp"

namespace tokweight {

// Dense row-major matrix.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    template <class U>
    Matrix<U> cast() const {
        Matrix<U> m(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = static_cast<U>(data[i]);
        return m;
    }
};

template <class U, class T>
std::vector<U> cast_vector(const std::vector<T>& v) {
    return std::vector<U>(v.begin(), v.end());
}

// out[r, :] = bias + sum_k a[r, k] * b[k, :]   (b is [in, out])
template <class T>
void matmul_bias(const Matrix<T>& a, const Matrix<T>& b, const std::vector<T>* bias, Matrix<T>& out) {
    if (a.cols != b.rows) throw Error(ErrorKind::ShapeMismatch, "matmul inner dimensions differ");
    out.rows = a.rows;
    out.cols = b.cols;
    out.data.assign(a.rows * b.cols, T(0));
    for (std::size_t r = 0; r < a.rows; ++r) {
        T* o = out.row(r);
        if (bias) {
            for (std::size_t c = 0; c < b.cols; ++c) o[c] = (*bias)[c];
        }
        const T* ar = a.row(r);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T av = ar[k];
            const T* br = b.row(k);
            for (std::size_t c = 0; c < b.cols; ++c) o[c] += av * br[c];
        }
    }
}

// out[r, k] = sum_c a[r, c] * b[k, c]   (multiply by b transposed)
template <class T>
void matmul_transposed(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    if (a.cols != b.cols) throw Error(ErrorKind::ShapeMismatch, "matmul_transposed dimensions differ");
    out.rows = a.rows;
    out.cols = b.rows;
    out.data.assign(a.rows * b.rows, T(0));
    for (std::size_t r = 0; r < a.rows; ++r) {
        const T* ar = a.row(r);
        for (std::size_t k = 0; k < b.rows; ++k) {
            const T* br = b.row(k);
            T s = T(0);
            for (std::size_t c = 0; c < a.cols; ++c) s += ar[c] * br[c];
            out(r, k) = s;
        }
    }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T l2_norm(const std::vector<T>& v) {
    return std::sqrt(dot(v.data(), v.data(), v.size()));
}

template <class T>
std::vector<T> normalized(const std::vector<T>& v) {
    T n = l2_norm(v);
    if (!(n > T(0))) throw Error(ErrorKind::NonFinite, "cannot normalize a zero vector");
    std::vector<T> out(v);
    for (auto& x : out) x /= n;
    return out;
}

}  // namespace tokweight
