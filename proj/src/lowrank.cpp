// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/core.h>

#include "bnr/error.hpp"

namespace bnr {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kJacobiTolerance = 1e-15;
constexpr double kSymmetryTolerance = 1e-10;
constexpr double kEquivalenceTolerance = 1e-8;

/// Rotation (c, s) that annihilates the off-diagonal entry of the 2x2
/// symmetric block [[app, apq], [apq, aqq]].
std::pair<double, double> jacobi_rotation(double app, double aqq, double apq) {
    const double theta = (aqq - app) / (2.0 * apq);
    double t;
    if (std::abs(theta) > 1e150)
        t = 0.5 / theta;
    else
        t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    return {c, t * c};
}

void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double mp = m(i, p);
        const double mq = m(i, q);
        m(i, p) = c * mp - s * mq;
        m(i, q) = s * mp + c * mq;
    }
}

void rotate_rows(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const double mp = m(p, j);
        const double mq = m(q, j);
        m(p, j) = c * mp - s * mq;
        m(q, j) = s * mp + c * mq;
    }
}

/// Flip each column so its largest-magnitude entry is positive.
void canonicalize_signs(Matrix& vectors) {
    for (std::size_t j = 0; j < vectors.cols(); ++j) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < vectors.rows(); ++i)
            if (std::abs(vectors(i, j)) > std::abs(vectors(arg, j)))
                arg = i;
        if (vectors.rows() > 0 && vectors(arg, j) < 0.0)
            for (std::size_t i = 0; i < vectors.rows(); ++i)
                vectors(i, j) = -vectors(i, j);
    }
}

/// Reorders columns of `vectors` (and `values`) by descending value.
void sort_descending(std::vector<double>& values, Matrix& vectors) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] > values[b]; });
    std::vector<double> sorted(values.size());
    Matrix out(vectors.rows(), vectors.cols());
    for (std::size_t j = 0; j < order.size(); ++j) {
        sorted[j] = values[order[j]];
        for (std::size_t i = 0; i < vectors.rows(); ++i)
            out(i, j) = vectors(i, order[j]);
    }
    values = std::move(sorted);
    vectors = std::move(out);
}

/// One-sided Jacobi for m >= n.
SingularValueDecomposition tall_svd(const Matrix& M) {
    const std::size_t n = M.cols();
    Matrix W = M;
    Matrix V = Matrix::identity(n);
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < W.rows(); ++i) {
                    alpha += W(i, p) * W(i, p);
                    beta += W(i, q) * W(i, q);
                    gamma += W(i, p) * W(i, q);
                }
                if (gamma == 0.0 || std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta))
                    continue;
                rotated = true;
                auto [c, s] = jacobi_rotation(alpha, beta, gamma);
                rotate_columns(W, p, q, c, s);
                rotate_columns(V, p, q, c, s);
            }
        if (!rotated)
            break;
    }

    std::vector<double> sigma(n);
    Matrix U(W.rows(), n);
    for (std::size_t j = 0; j < n; ++j) {
        double s2 = 0.0;
        for (std::size_t i = 0; i < W.rows(); ++i)
            s2 += W(i, j) * W(i, j);
        sigma[j] = std::sqrt(s2);
        if (sigma[j] > 0.0)
            for (std::size_t i = 0; i < W.rows(); ++i)
                U(i, j) = W(i, j) / sigma[j];
    }

    // Sort U and V together by stacking them.
    Matrix stacked(U.rows() + V.rows(), n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < U.rows(); ++i)
            stacked(i, j) = U(i, j);
        for (std::size_t i = 0; i < V.rows(); ++i)
            stacked(U.rows() + i, j) = V(i, j);
    }
    sort_descending(sigma, stacked);
    SingularValueDecomposition out{Matrix(U.rows(), n), std::move(sigma), Matrix(V.rows(), n)};
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < U.rows(); ++i)
            out.U(i, j) = stacked(i, j);
        for (std::size_t i = 0; i < V.rows(); ++i)
            out.V(i, j) = stacked(U.rows() + i, j);
    }
    return out;
}

} // namespace

Matrix gram_matrix(const AdapterPair& pair) {
    const Matrix& A = pair.A();
    Matrix G = times_transpose(A, A);
    // Mirror the upper triangle so G is symmetric to the last bit.
    for (std::size_t i = 0; i < G.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            G(i, j) = G(j, i);
    return G;
}

Eigendecomposition symmetric_eigendecomposition(const Matrix& G) {
    const std::size_t n = G.rows();
    if (n == 0)
        throw ValidationError("eigendecomposition of an empty matrix");
    if (G.cols() != n)
        throw ValidationError(fmt::format("eigendecomposition needs a square matrix, got {}x{}", G.rows(), G.cols()));
    if (!all_finite(G))
        throw ValidationError("eigendecomposition input contains non-finite values");
    const double scale = frobenius_norm(G);
    if (frobenius_norm(G - G.transpose()) > kSymmetryTolerance * std::max(scale, 1.0))
        throw ValidationError("eigendecomposition input is not symmetric");

    Matrix A(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            A(i, j) = 0.5 * (G(i, j) + G(j, i));
    Matrix V = Matrix::identity(n);

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) <= std::numeric_limits<double>::min() ||
                    std::abs(apq) <= kJacobiTolerance * std::sqrt(std::abs(A(p, p) * A(q, q))))
                    continue;
                rotated = true;
                auto [c, s] = jacobi_rotation(A(p, p), A(q, q), apq);
                rotate_columns(A, p, q, c, s);
                rotate_rows(A, p, q, c, s);
                A(p, q) = 0.0;
                A(q, p) = 0.0;
                rotate_columns(V, p, q, c, s);
            }
        if (!rotated)
            break;
    }

    Eigendecomposition out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.values[i] = A(i, i);
    out.vectors = std::move(V);
    sort_descending(out.values, out.vectors);
    canonicalize_signs(out.vectors);
    return out;
}

EffectiveSubspace effective_subspace(const AdapterPair& pair, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw ValidationError(fmt::format("tau must lie in (0, 1), got {}", tau));
    auto eig = symmetric_eigendecomposition(gram_matrix(pair));

    EffectiveSubspace out;
    out.tau = tau;
    out.eigenvalues = eig.values;
    // G is PSD; negative values are rounding noise.
    for (double& v : out.eigenvalues)
        v = std::max(v, 0.0);

    const double top = out.eigenvalues.front();
    if (top > 0.0) {
        const double cut = tau * top;
        for (double v : out.eigenvalues) {
            if (v > cut)
                ++out.k;
            else if (v == cut)
                ++out.threshold_ties;
        }
    }
    out.V_eff = eig.vectors.columns(0, out.k);
    return out;
}

QrFactorization householder_qr(const Matrix& M) {
    if (M.cols() == 0)
        throw ValidationError("QR of a matrix with no columns");
    if (M.rows() < M.cols())
        throw ValidationError(fmt::format("QR needs d_out >= k, got {}x{}", M.rows(), M.cols()));
    if (!all_finite(M))
        throw ValidationError("QR input contains non-finite values");

    QrFactorization out;
    const double scale = frobenius_norm(M);
    for (std::size_t j = 0; j < M.cols(); ++j)
        if (norm2(M.col(j)) > kZeroColumnTolerance * scale)
            out.kept.push_back(j);

    const std::size_t d = M.rows();
    const std::size_t k = out.kept.size();
    Matrix R(d, k);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < k; ++j)
            R(i, j) = M(i, out.kept[j]);

    std::vector<std::vector<double>> reflectors(k);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> v(d - j);
        for (std::size_t i = j; i < d; ++i)
            v[i - j] = R(i, j);
        const double xnorm = norm2(v);
        if (xnorm == 0.0)
            continue;
        const double alpha = v[0] >= 0.0 ? -xnorm : xnorm;
        v[0] -= alpha;
        const double vnorm = norm2(v);
        if (vnorm == 0.0)
            continue;
        for (double& x : v)
            x /= vnorm;
        for (std::size_t c = j; c < k; ++c) {
            double proj = 0.0;
            for (std::size_t i = j; i < d; ++i)
                proj += v[i - j] * R(i, c);
            for (std::size_t i = j; i < d; ++i)
                R(i, c) -= 2.0 * v[i - j] * proj;
        }
        reflectors[j] = std::move(v);
    }

    Matrix Q(d, k);
    for (std::size_t j = 0; j < k; ++j)
        Q(j, j) = 1.0;
    for (std::size_t jj = k; jj-- > 0;) {
        const auto& v = reflectors[jj];
        if (v.empty())
            continue;
        for (std::size_t c = 0; c < k; ++c) {
            double proj = 0.0;
            for (std::size_t i = jj; i < d; ++i)
                proj += v[i - jj] * Q(i, c);
            for (std::size_t i = jj; i < d; ++i)
                Q(i, c) -= 2.0 * v[i - jj] * proj;
        }
    }

    out.R = Matrix(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        const double sign = R(i, i) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = i; j < k; ++j)
            out.R(i, j) = sign * R(i, j);
        if (sign < 0.0)
            for (std::size_t r = 0; r < d; ++r)
                Q(r, i) = -Q(r, i);
    }
    out.Q = std::move(Q);
    return out;
}

OrthonormalBasis qr_orthonormal_basis(const Matrix& M) {
    auto qr = householder_qr(M);
    const std::size_t k = qr.kept.size();
    return {std::move(qr.Q), k};
}

SingularValueDecomposition singular_value_decomposition(const Matrix& M) {
    if (M.empty())
        throw ValidationError("SVD of an empty matrix");
    if (!all_finite(M))
        throw ValidationError("SVD input contains non-finite values");
    if (M.rows() >= M.cols())
        return tall_svd(M);
    auto t = tall_svd(M.transpose());
    // Mᵀ = U Σ Vᵀ  ⇒  M = V Σ Uᵀ. Zero-σ columns of the new U come from V
    // and are valid unit vectors; null them to keep the documented contract.
    SingularValueDecomposition out{std::move(t.V), std::move(t.singular_values), std::move(t.U)};
    for (std::size_t j = 0; j < out.singular_values.size(); ++j)
        if (out.singular_values[j] == 0.0)
            for (std::size_t i = 0; i < out.U.rows(); ++i)
                out.U(i, j) = 0.0;
    return out;
}

Matrix column_space_basis(const Matrix& M) {
    auto svd = singular_value_decomposition(M);
    const double top = svd.singular_values.front();
    std::size_t rank = 0;
    if (top > 0.0)
        while (rank < svd.singular_values.size() && svd.singular_values[rank] > kRankTolerance * top)
            ++rank;
    return svd.U.columns(0, rank);
}

Matrix column_space_projector(const Matrix& M) {
    const Matrix Q = column_space_basis(M);
    if (Q.cols() == 0)
        throw ValidationError("column space projector of an all-zero matrix");
    return times_transpose(Q, Q);
}

double max_principal_angle(const Matrix& Q1, const Matrix& Q2) {
    if (Q1.rows() != Q2.rows())
        throw ValidationError("principal angles need bases in the same ambient space");
    if (Q1.cols() != Q2.cols())
        return std::numbers::pi / 2.0;
    if (Q1.cols() == 0)
        return 0.0;
    // sin θ_max = ‖(I − Q2 Q2ᵀ) Q1‖₂; take both directions to stay symmetric
    // under rounding.
    auto sine = [](const Matrix& X, const Matrix& Y) {
        const Matrix residual = X - Y * transpose_times(Y, X);
        return singular_value_decomposition(residual).singular_values.front();
    };
    const double s = std::max(sine(Q1, Q2), sine(Q2, Q1));
    return std::asin(std::min(1.0, s));
}

ProjectionCheck verify_projection_equivalence(const AdapterPair& pair) {
    ProjectionCheck out;
    const auto sigma = singular_value_decomposition(pair.A()).singular_values;
    out.hypothesis_satisfied = pair.rank() <= pair.d_in() && sigma.front() > 0.0 &&
                               sigma.back() > kRankTolerance * sigma.front();
    if (!out.hypothesis_satisfied)
        return out;
    out.residual = frobenius_norm(column_space_projector(pair.dense()) - column_space_projector(pair.B()));
    out.holds = out.residual <= kEquivalenceTolerance;
    return out;
}

Matrix truncate_rank(const Matrix& M, std::size_t k) {
    auto svd = singular_value_decomposition(M);
    k = std::min(k, svd.singular_values.size());
    Matrix out(M.rows(), M.cols());
    for (std::size_t l = 0; l < k; ++l) {
        const double s = svd.singular_values[l];
        for (std::size_t i = 0; i < M.rows(); ++i) {
            const double u = svd.U(i, l) * s;
            for (std::size_t j = 0; j < M.cols(); ++j)
                out(i, j) += u * svd.V(j, l);
        }
    }
    return out;
}

PrincipalSubspaceCheck verify_principal_restriction(const AdapterPair& pair, double tau) {
    const auto subspace = effective_subspace(pair, tau);
    if (subspace.k == 0)
        throw ValidationError("effective rank is zero; no principal subspace to compare");
    PrincipalSubspaceCheck out;
    out.k = subspace.k;
    const Matrix restricted = column_space_basis(pair.B() * subspace.V_eff);
    const Matrix truncated = column_space_basis(pair.B() * truncate_rank(pair.A(), subspace.k));
    out.max_angle = max_principal_angle(restricted, truncated);
    out.holds = out.max_angle <= kEquivalenceTolerance;
    return out;
}

} // namespace bnr
