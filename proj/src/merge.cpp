// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/merge.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/core.h>

#include "bnr/diagnostics.hpp"
#include "bnr/error.hpp"

namespace bnr {

std::string_view to_string(RankCollapsePolicy policy) {
    switch (policy) {
    case RankCollapsePolicy::automatic:
        return "auto";
    case RankCollapsePolicy::always_restrict:
        return "always_restrict";
    case RankCollapsePolicy::never_restrict:
        return "never_restrict";
    }
    return "unknown";
}

RankCollapsePolicy parse_policy(std::string_view text) {
    for (auto p : {RankCollapsePolicy::automatic, RankCollapsePolicy::always_restrict,
                   RankCollapsePolicy::never_restrict})
        if (to_string(p) == text)
            return p;
    throw ValidationError(fmt::format("unknown rank-collapse policy '{}'", text));
}

void MergeConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError(fmt::format("alpha must lie in [0, 1], got {}", alpha));
    if (!(tau > 0.0 && tau < 1.0))
        throw ValidationError(fmt::format("tau must lie in (0, 1), got {}", tau));
    if (!(averaging_weight > 0.0 && averaging_weight <= 1.0))
        throw ValidationError(fmt::format("averaging weight must lie in (0, 1], got {}", averaging_weight));
}

Matrix soft_orthogonalize(const Matrix& W_R, const OrthonormalBasis& Q_B, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError(fmt::format("alpha must lie in [0, 1], got {}", alpha));
    if (Q_B.source_rank == 0 || Q_B.Q.cols() == 0)
        return W_R;
    if (Q_B.Q.rows() != W_R.rows())
        throw ValidationError(fmt::format("shape mismatch: basis has {} rows, W_R has {}", Q_B.Q.rows(),
                                          W_R.rows()));
    Matrix removed = Q_B.Q * transpose_times(Q_B.Q, W_R);
    removed *= alpha;
    return W_R - removed;
}

bool detect_rank_collapse(const AdapterPair& pair, double tau) {
    return effective_subspace(pair, tau).k < pair.rank();
}

LayerMergeResult merge_layer(const Matrix& base, const AdapterPair& user, const Matrix& reinforce_dense,
                             const MergeConfig& cfg, std::string name) {
    cfg.validate();
    if (base.rows() != user.d_out() || base.cols() != user.d_in() || reinforce_dense.rows() != base.rows() ||
        reinforce_dense.cols() != base.cols())
        throw ValidationError(fmt::format("layer '{}': shape mismatch (base {}x{}, user {}x{}, reinforce {}x{})",
                                          name, base.rows(), base.cols(), user.d_out(), user.d_in(),
                                          reinforce_dense.rows(), reinforce_dense.cols()));
    if (!all_finite(base) || !all_finite(reinforce_dense))
        throw ValidationError(fmt::format("layer '{}': non-finite weights", name));

    LayerMergeReport report;
    report.name = std::move(name);
    report.nominal_rank = user.rank();

    const auto subspace = effective_subspace(user, cfg.tau);
    report.effective_rank = subspace.k;
    report.threshold_ties = subspace.threshold_ties;
    report.restriction_applied =
        cfg.policy == RankCollapsePolicy::always_restrict ||
        (cfg.policy == RankCollapsePolicy::automatic && subspace.k < user.rank());

    OrthonormalBasis basis;
    const Matrix restricted = report.restriction_applied ? user.B() * subspace.V_eff : user.B();
    if (restricted.cols() > 0)
        basis = qr_orthonormal_basis(restricted);
    report.orthogonalization_skipped = basis.source_rank == 0;

    Matrix orthogonalized = soft_orthogonalize(reinforce_dense, basis, cfg.alpha);
    if (!report.orthogonalization_skipped)
        report.orthogonality_residual = frobenius_norm(transpose_times(basis.Q, orthogonalized));

    const Matrix user_dense = user.dense();
    Matrix update = user_dense + orthogonalized;
    if (frobenius_norm(user_dense) > 0.0) {
        const auto energy = energy_metrics(update, user_dense);
        report.energy_retain = energy.retain;
        report.energy_damage = energy.damage;
    }

    Matrix merged = base + cfg.averaging_weight * update;
    return {std::move(merged), std::move(update), std::move(report)};
}

BundleMergeResult merge_bundles(const TensorArchive& base, const AdapterBundle& user,
                                const AdapterBundle& reinforce, const MergeConfig& cfg) {
    cfg.validate();
    std::set<std::string> base_names;
    for (const auto& t : base.tensors)
        base_names.insert(t.name);
    auto check = [&](const AdapterBundle& bundle, std::string_view what) {
        for (const auto& name : base_names)
            if (!bundle.layers.contains(name))
                throw ValidationError(fmt::format("layer '{}' missing from {} bundle", name, what));
        for (const auto& [name, pair] : bundle.layers)
            if (!base_names.contains(name))
                throw ValidationError(fmt::format("layer '{}' of {} bundle missing from base", name, what));
    };
    check(user, "user");
    check(reinforce, "reinforce");

    BundleMergeResult out;
    std::vector<LayerMergeReport> reports;
    std::string tags;
    for (const auto& name : base_names) {
        auto layer = merge_layer(to_matrix(base.at(name)), user.layers.at(name),
                                 reinforce.layers.at(name).dense(), cfg, name);
        if (!all_finite(layer.merged))
            throw ValidationError(fmt::format("layer '{}': merge produced non-finite weights", name));
        out.merged.tensors.push_back(to_tensor(name, layer.merged));
        reports.push_back(std::move(layer.report));
        if (!tags.empty())
            tags += ',';
        tags += name;
    }
    out.report = summarize(cfg, std::move(reports));

    out.merged.metadata = {
        {"role", "merged"},
        {"layers", tags},
        {"alpha", fmt::format("{:.17g}", cfg.alpha)},
        {"tau", fmt::format("{:.17g}", cfg.tau)},
        {"averaging_weight", fmt::format("{:.17g}", cfg.averaging_weight)},
        {"rank_collapse_policy", std::string(to_string(cfg.policy))},
    };
    return out;
}

MergeReport summarize(const MergeConfig& cfg, std::vector<LayerMergeReport> layers) {
    std::sort(layers.begin(), layers.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    MergeReport report;
    report.config = cfg;
    std::vector<double> retains;
    std::vector<double> damages;
    for (const auto& l : layers)
        if (l.energy_retain) {
            retains.push_back(*l.energy_retain);
            damages.push_back(*l.energy_damage);
        }
    if (!retains.empty()) {
        report.mean_energy_retain = layer_average(retains);
        report.mean_energy_damage = layer_average(damages);
    }
    report.layers = std::move(layers);
    return report;
}

nlohmann::ordered_json to_json(const MergeReport& report) {
    using nlohmann::ordered_json;
    auto optional_number = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); };

    ordered_json layers = ordered_json::array();
    for (const auto& l : report.layers)
        layers.push_back({
            {"name", l.name},
            {"effective_rank", l.effective_rank},
            {"nominal_rank", l.nominal_rank},
            {"restriction_applied", l.restriction_applied},
            {"orthogonalization_skipped", l.orthogonalization_skipped},
            {"threshold_ties", l.threshold_ties},
            {"orthogonality_residual", l.orthogonality_residual},
            {"energy_retain", optional_number(l.energy_retain)},
            {"energy_damage", optional_number(l.energy_damage)},
        });
    return {
        {"alpha", report.config.alpha},
        {"tau", report.config.tau},
        {"averaging_weight", report.config.averaging_weight},
        {"rank_collapse_policy", std::string(to_string(report.config.policy))},
        {"layers", std::move(layers)},
        {"mean_energy_retain", optional_number(report.mean_energy_retain)},
        {"mean_energy_damage", optional_number(report.mean_energy_damage)},
    };
}

} // namespace bnr
