// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace bnr {

/// Dense row-major matrix of doubles.
///
/// Everything numeric in the toolkit runs in double precision; archives store
/// f32 and are widened on load.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double value = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix column(std::span<const double> values);
    static Matrix from_values(std::size_t rows, std::size_t cols, std::vector<double> values);

    [[nodiscard]] std::size_t rows() const noexcept { return mRows; }
    [[nodiscard]] std::size_t cols() const noexcept { return mCols; }
    [[nodiscard]] std::size_t size() const noexcept { return mValues.size(); }
    [[nodiscard]] bool empty() const noexcept { return mValues.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return mValues[r * mCols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return mValues[r * mCols + c]; }

    [[nodiscard]] std::span<double> values() noexcept { return mValues; }
    [[nodiscard]] std::span<const double> values() const noexcept { return mValues; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {mValues.data() + r * mCols, mCols};
    }
    [[nodiscard]] std::vector<double> col(std::size_t c) const;

    [[nodiscard]] Matrix transpose() const;
    /// Columns [first, first + count).
    [[nodiscard]] Matrix columns(std::size_t first, std::size_t count) const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scale) noexcept;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t mRows = 0;
    std::size_t mCols = 0;
    std::vector<double> mValues;
};

Matrix operator+(Matrix lhs, const Matrix& rhs);
Matrix operator-(Matrix lhs, const Matrix& rhs);
Matrix operator*(const Matrix& lhs, const Matrix& rhs);
Matrix operator*(double scale, Matrix m);

/// lhsᵀ · rhs without materializing the transpose.
Matrix transpose_times(const Matrix& lhs, const Matrix& rhs);
/// lhs · rhsᵀ without materializing the transpose.
Matrix times_transpose(const Matrix& lhs, const Matrix& rhs);

double frobenius_norm(const Matrix& m);
double frobenius_inner(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

} // namespace bnr
