// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "bnr/adapter.hpp"
#include "bnr/matrix.hpp"

namespace bnr::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        mPath = std::filesystem::temp_directory_path() /
                ("bnr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(mPath);
        std::filesystem::create_directories(mPath);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(mPath, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return mPath; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return mPath / name; }

private:
    std::filesystem::path mPath;
};

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.values())
        v = dist(rng);
    return m;
}

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            e(i, j) = m(i, j);
    return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
    Matrix m(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = 0; j < e.cols(); ++j)
            m(i, j) = e(i, j);
    return m;
}

/// Orthogonal projector onto col(M) via a pivoted QR of Eigen, independent of
/// the library's own factorizations.
inline Eigen::MatrixXd eigen_projector(const Matrix& M) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(to_eigen(M));
    qr.setThreshold(1e-10);
    const auto rank = qr.rank();
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(M.rows(), rank);
    return Q * Q.transpose();
}

/// r×d_in matrix U·diag(sigma)·Vᵀ with random orthonormal U, V.
inline Matrix with_singular_values(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                   const std::vector<double>& sigma) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qu(to_eigen(random_matrix(rng, rows, rows)));
    Eigen::HouseholderQR<Eigen::MatrixXd> qv(to_eigen(random_matrix(rng, cols, cols)));
    Eigen::MatrixXd U = qu.householderQ();
    Eigen::MatrixXd V = qv.householderQ();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(rows, cols);
    for (std::size_t i = 0; i < sigma.size(); ++i)
        S(i, i) = sigma[i];
    return from_eigen(U * S * V.transpose());
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
}

} // namespace bnr::test
