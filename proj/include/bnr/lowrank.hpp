// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <vector>

#include "bnr/adapter.hpp"
#include "bnr/matrix.hpp"

namespace bnr {

/// Default effective-rank threshold τ.
inline constexpr double kDefaultTau = 1e-6;
/// Singular values at or below this fraction of the largest count as zero
/// when a rank-revealing basis is needed.
inline constexpr double kRankTolerance = 1e-10;
/// Columns with norm at or below this fraction of ‖M‖_F are dropped before QR.
inline constexpr double kZeroColumnTolerance = 1e-12;

/// Orthonormal columns spanning the output space of some factor.
struct OrthonormalBasis {
    Matrix Q;                    ///< d_out×k
    std::size_t source_rank = 0; ///< k; zero means the basis is empty
};

/// Thin Householder QR of the kept columns of M.
struct QrFactorization {
    Matrix Q;                          ///< d_out×k, orthonormal columns
    Matrix R;                          ///< k×k upper triangular, diag ≥ 0
    std::vector<std::size_t> kept;     ///< indices of the columns of M that were factored
};

struct Eigendecomposition {
    std::vector<double> values; ///< descending
    Matrix vectors;             ///< column i pairs with values[i]
};

struct EffectiveSubspace {
    std::vector<double> eigenvalues; ///< λ_1 ≥ … ≥ λ_r ≥ 0
    Matrix V_eff;                    ///< r×k
    double tau = kDefaultTau;
    std::size_t k = 0;
    /// Eigenvalues exactly equal to τ·λ_1. They are excluded (strict test)
    /// and reported so callers can flag the ambiguity.
    std::size_t threshold_ties = 0;
};

struct SingularValueDecomposition {
    Matrix U;                            ///< m×p, p = min(m, n)
    std::vector<double> singular_values; ///< descending, length p
    Matrix V;                            ///< n×p
};

/// G = A·Aᵀ.
Matrix gram_matrix(const AdapterPair& pair);

/// Cyclic Jacobi on a small symmetric matrix. The input is symmetrized before
/// solving; asymmetry beyond 1e-10 (relative to ‖G‖_F) is rejected.
Eigendecomposition symmetric_eigendecomposition(const Matrix& G);

/// Gram eigenvectors whose eigenvalue exceeds τ·λ_max.
EffectiveSubspace effective_subspace(const AdapterPair& pair, double tau = kDefaultTau);

/// Householder QR without pivoting. Numerically zero columns are dropped
/// first; R's diagonal is made non-negative so Q is unique.
QrFactorization householder_qr(const Matrix& M);
OrthonormalBasis qr_orthonormal_basis(const Matrix& M);

/// One-sided Jacobi SVD. Left vectors paired with zero singular values are
/// left as zero columns.
SingularValueDecomposition singular_value_decomposition(const Matrix& M);

/// Orthonormal basis of col(M) from the SVD, keeping σ > kRankTolerance·σ_max.
Matrix column_space_basis(const Matrix& M);

/// P = Q·Qᵀ for an orthonormal basis of col(M). Reference path for tests and
/// equivalence checks; the merge itself never forms a projector.
Matrix column_space_projector(const Matrix& M);

/// Largest principal angle (radians) between two subspaces given by
/// orthonormal bases. Computed from sines so tiny angles stay accurate.
/// Subspaces of different dimension are π/2 apart.
double max_principal_angle(const Matrix& Q1, const Matrix& Q2);

struct ProjectionCheck {
    bool hypothesis_satisfied = false; ///< A has full row rank
    bool holds = false;
    double residual = 0.0;             ///< ‖P_{BA} − P_B‖_F
};

/// col(B·A) and col(B) give the same projector when A has full row rank.
ProjectionCheck verify_projection_equivalence(const AdapterPair& pair);

struct PrincipalSubspaceCheck {
    std::size_t k = 0;
    bool holds = false;
    double max_angle = 0.0;
};

/// span(B·V_eff) against col(B·Ã), Ã the rank-k SVD truncation of A.
/// Throws ValidationError when thresholding leaves k = 0.
PrincipalSubspaceCheck verify_principal_restriction(const AdapterPair& pair, double tau = kDefaultTau);

/// Rank-k truncation of M via the SVD.
Matrix truncate_rank(const Matrix& M, std::size_t k);

} // namespace bnr
