// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>
#include <limits>

#include "bnr/error.hpp"
#include "bnr/matrix.hpp"
#include "support.hpp"

using namespace bnr;

TEST_CASE("matrix construction and access") {
    Matrix m{{1, 2, 3}, {4, 5, 6}};
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6);
    CHECK(m.col(1) == std::vector<double>{2, 5});
    CHECK(m.row(1)[0] == 4);
    CHECK(m.transpose() == Matrix{{1, 4}, {2, 5}, {3, 6}});
    CHECK(m.columns(1, 2) == Matrix{{2, 3}, {5, 6}});
    CHECK(Matrix::identity(2) == Matrix{{1, 0}, {0, 1}});
    CHECK(Matrix::column(std::vector<double>{1, 2}) == Matrix{{1}, {2}});
    CHECK_THROWS_AS(Matrix({{1, 2}, {3}}), ValidationError);
    CHECK_THROWS_AS(Matrix::from_values(2, 2, {1, 2, 3}), ValidationError);
}

TEST_CASE("matrix arithmetic") {
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{0, 1}, {1, 0}};
    CHECK(a + b == Matrix{{1, 3}, {4, 4}});
    CHECK(a - b == Matrix{{1, 1}, {2, 4}});
    CHECK(a * b == Matrix{{2, 1}, {4, 3}});
    CHECK(2.0 * a == Matrix{{2, 4}, {6, 8}});
    CHECK(frobenius_norm(Matrix{{3, 4}}) == 5.0);
    CHECK(frobenius_inner(a, b) == 5.0);
    CHECK(max_abs(Matrix{{-7, 2}}) == 7.0);
    CHECK(dot(std::vector<double>{1, 2}, std::vector<double>{3, 4}) == 11.0);
    CHECK(norm2(std::vector<double>{3, 4}) == 5.0);

    CHECK_THROWS_AS(a + Matrix(2, 3), ValidationError);
    CHECK_THROWS_AS(a * Matrix(3, 3), ValidationError);
    CHECK_THROWS_AS(frobenius_inner(a, Matrix(1, 4)), ValidationError);
}

TEST_CASE("transposed products agree with explicit transposes") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = test::random_matrix(rng, 5, 3);
        const Matrix b = test::random_matrix(rng, 5, 4);
        const Matrix c = test::random_matrix(rng, 2, 3);
        CHECK(max_abs(transpose_times(a, b) - a.transpose() * b) <= 1e-14);
        CHECK(max_abs(times_transpose(a, c) - a * c.transpose()) <= 1e-14);
        CHECK(max_abs(test::from_eigen(test::to_eigen(a).transpose() * test::to_eigen(b)) - transpose_times(a, b)) <=
              1e-13);
    }
}

TEST_CASE("finiteness") {
    Matrix m{{1, 2}};
    CHECK(all_finite(m));
    m(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(all_finite(m));
    m(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_FALSE(all_finite(m));
}
