// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bnr/adapter.hpp"
#include "bnr/lowrank.hpp"
#include "bnr/tensor_archive.hpp"

namespace bnr {

/// When to restrict the user subspace to its effective rank before QR.
enum class RankCollapsePolicy {
    automatic,       ///< only when detect_rank_collapse fires
    always_restrict,
    never_restrict,
};

std::string_view to_string(RankCollapsePolicy policy);
RankCollapsePolicy parse_policy(std::string_view text);

struct MergeConfig {
    double alpha = 0.1;            ///< orthogonalization strength, [0, 1]
    double tau = kDefaultTau;      ///< effective-rank threshold, (0, 1)
    double averaging_weight = 0.5; ///< weight on (W_U + W̃_R), (0, 1]
    RankCollapsePolicy policy = RankCollapsePolicy::automatic;

    /// Throws ValidationError if any field is out of range.
    void validate() const;
};

struct LayerMergeReport {
    std::string name;
    std::size_t effective_rank = 0; ///< k, or r when no restriction was computed
    std::size_t nominal_rank = 0;   ///< r
    bool restriction_applied = false;
    bool orthogonalization_skipped = false; ///< empty Q_B, W̃_R = W_R
    std::size_t threshold_ties = 0;
    double orthogonality_residual = 0.0;    ///< ‖Q_Bᵀ W̃_R‖_F
    /// Unset when W_U is exactly zero and the energy ratio is undefined.
    std::optional<double> energy_retain;
    std::optional<double> energy_damage;
};

struct MergeReport {
    MergeConfig config;
    std::vector<LayerMergeReport> layers; ///< sorted by name
    /// Averages over the layers whose energies are defined.
    std::optional<double> mean_energy_retain;
    std::optional<double> mean_energy_damage;
};

nlohmann::ordered_json to_json(const MergeReport& report);

/// Sorts layer reports by name and fills the layer-averaged energies.
MergeReport summarize(const MergeConfig& cfg, std::vector<LayerMergeReport> layers);

struct LayerMergeResult {
    Matrix merged;
    /// W_U + W̃_R, the update before averaging; energies are measured on it.
    Matrix merged_update;
    LayerMergeReport report;
};

/// W̃_R = W_R − α·Q_B(Q_Bᵀ W_R). An empty basis returns W_R unchanged.
Matrix soft_orthogonalize(const Matrix& W_R, const OrthonormalBasis& Q_B, double alpha);

/// True iff the effective rank under τ falls below the nominal rank.
bool detect_rank_collapse(const AdapterPair& pair, double tau = kDefaultTau);

/**
 * Merges one layer: optional effective-rank restriction of B_U, QR basis,
 * soft orthogonalization of the dense reinforce update, then
 * W_final = W_base + w·(W_U + W̃_R).
 */
LayerMergeResult merge_layer(const Matrix& base, const AdapterPair& user, const Matrix& reinforce_dense,
                             const MergeConfig& cfg, std::string name = {});

struct BundleMergeResult {
    TensorArchive merged; ///< one dense tensor per layer, same names as the base archive
    MergeReport report;
};

/**
 * Merges every layer. The base archive holds one d_out×d_in tensor per layer
 * name; the three layer sets must coincide exactly.
 */
BundleMergeResult merge_bundles(const TensorArchive& base, const AdapterBundle& user,
                                const AdapterBundle& reinforce, const MergeConfig& cfg);

} // namespace bnr
