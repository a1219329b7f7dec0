// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/matrix.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "bnr/error.hpp"

namespace bnr {

namespace {
void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(fmt::format("shape mismatch in {}: {}x{} vs {}x{}", op, a.rows(), a.cols(),
                                          b.rows(), b.cols()));
}
} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double value)
    : mRows(rows), mCols(cols), mValues(rows * cols, value) {
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    mRows = rows.size();
    mCols = mRows == 0 ? 0 : rows.begin()->size();
    mValues.reserve(mRows * mCols);
    for (const auto& r : rows) {
        if (r.size() != mCols)
            throw ValidationError("ragged matrix literal");
        mValues.insert(mValues.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        m(i, i) = 1.0;
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    return from_values(values.size(), 1, {values.begin(), values.end()});
}

Matrix Matrix::from_values(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols)
        throw ValidationError(fmt::format("{} values cannot fill a {}x{} matrix", values.size(), rows, cols));
    Matrix m;
    m.mRows = rows;
    m.mCols = cols;
    m.mValues = std::move(values);
    return m;
}

std::vector<double> Matrix::col(std::size_t c) const {
    std::vector<double> out(mRows);
    for (std::size_t r = 0; r < mRows; ++r)
        out[r] = (*this)(r, c);
    return out;
}

Matrix Matrix::transpose() const {
    Matrix t(mCols, mRows);
    for (std::size_t r = 0; r < mRows; ++r)
        for (std::size_t c = 0; c < mCols; ++c)
            t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::columns(std::size_t first, std::size_t count) const {
    if (first + count > mCols)
        throw ValidationError(fmt::format("column block [{}, {}) out of range for {} columns", first,
                                          first + count, mCols));
    Matrix out(mRows, count);
    for (std::size_t r = 0; r < mRows; ++r)
        for (std::size_t c = 0; c < count; ++c)
            out(r, c) = (*this)(r, first + c);
    return out;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "+");
    for (std::size_t i = 0; i < mValues.size(); ++i)
        mValues[i] += other.mValues[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "-");
    for (std::size_t i = 0; i < mValues.size(); ++i)
        mValues[i] -= other.mValues[i];
    return *this;
}

Matrix& Matrix::operator*=(double scale) noexcept {
    for (double& v : mValues)
        v *= scale;
    return *this;
}

Matrix operator+(Matrix lhs, const Matrix& rhs) {
    lhs += rhs;
    return lhs;
}

Matrix operator-(Matrix lhs, const Matrix& rhs) {
    lhs -= rhs;
    return lhs;
}

Matrix operator*(double scale, Matrix m) {
    m *= scale;
    return m;
}

Matrix operator*(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.cols() != rhs.rows())
        throw ValidationError(fmt::format("shape mismatch in *: {}x{} times {}x{}", lhs.rows(), lhs.cols(),
                                          rhs.rows(), rhs.cols()));
    Matrix out(lhs.rows(), rhs.cols());
    for (std::size_t i = 0; i < lhs.rows(); ++i)
        for (std::size_t k = 0; k < lhs.cols(); ++k) {
            const double a = lhs(i, k);
            if (a == 0.0)
                continue;
            for (std::size_t j = 0; j < rhs.cols(); ++j)
                out(i, j) += a * rhs(k, j);
        }
    return out;
}

Matrix transpose_times(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.rows() != rhs.rows())
        throw ValidationError(fmt::format("shape mismatch in transpose_times: {}x{} and {}x{}", lhs.rows(),
                                          lhs.cols(), rhs.rows(), rhs.cols()));
    Matrix out(lhs.cols(), rhs.cols());
    for (std::size_t k = 0; k < lhs.rows(); ++k)
        for (std::size_t i = 0; i < lhs.cols(); ++i) {
            const double a = lhs(k, i);
            if (a == 0.0)
                continue;
            for (std::size_t j = 0; j < rhs.cols(); ++j)
                out(i, j) += a * rhs(k, j);
        }
    return out;
}

Matrix times_transpose(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.cols() != rhs.cols())
        throw ValidationError(fmt::format("shape mismatch in times_transpose: {}x{} and {}x{}", lhs.rows(),
                                          lhs.cols(), rhs.rows(), rhs.cols()));
    Matrix out(lhs.rows(), rhs.rows());
    for (std::size_t i = 0; i < lhs.rows(); ++i)
        for (std::size_t j = 0; j < rhs.rows(); ++j)
            out(i, j) = dot(lhs.row(i), rhs.row(j));
    return out;
}

double frobenius_norm(const Matrix& m) {
    return norm2(m.values());
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_inner");
    return dot(a.values(), b.values());
}

double max_abs(const Matrix& m) {
    double out = 0.0;
    for (double v : m.values())
        out = std::max(out, std::abs(v));
    return out;
}

bool all_finite(const Matrix& m) {
    return all_finite(m.values());
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ValidationError(fmt::format("length mismatch in dot: {} vs {}", a.size(), b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v)
        acc += x * x;
    return std::sqrt(acc);
}

} // namespace bnr
