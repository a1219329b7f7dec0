// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bnr/adapter.hpp"
#include "bnr/diagnostics.hpp"
#include "bnr/matrix.hpp"
#include "bnr/merge.hpp"

/**
 * Linear least-squares stand-in for the buffer / reinforce / merge pipeline.
 *
 * Each "model" is a single weight matrix W and each task is a target matrix T
 * with its own inputs X; the task loss is 1/(2N)·‖(W − T)X‖_F². Harmful
 * queries, user queries and benign queries live in mutually orthogonal input
 * subspaces. Refusal and harmful responses share the harmful queries and
 * differ only in their target:
 *
 *   W_refuse = W_base + D_s,  W_harm = W_base − c·D_s,
 *   W_benign = W_base + D_b,  W_user = W_base + D_u,
 *
 * with D_s, D_b, D_u low-rank and supported on the matching input subspace.
 * Adapters are trained by plain gradient descent on their B and A factors.
 */
namespace bnr::sim {

enum class Task { harm, refuse, benign, user };
inline constexpr std::array kAllTasks{Task::harm, Task::refuse, Task::benign, Task::user};
std::string_view to_string(Task task);

struct SimConfig {
    std::size_t out_dim = 16;
    std::size_t in_dim = 16;
    std::size_t rank = 4;
    std::size_t samples = 64; ///< N per task
    std::size_t steps = 500;
    std::size_t layers = 1;   ///< independent weight matrices, "layer0", "layer1", …
    std::size_t harmful_input_dim = 6;
    std::size_t user_input_dim = 5; ///< benign inputs take the remaining dimensions
    double lr_scale = 1.0;          ///< lr = lr_scale / λ_max of the stage's input second moment
    double harmful_ratio = 0.5;     ///< p
    double harm_strength = 0.5;     ///< c
    double init_scale = 0.01;       ///< A ~ N(0, (init_scale/√n)²), B = 0
    std::vector<double> safety_spectrum{0.6, 0.4};
    std::vector<double> benign_spectrum{0.5, 0.3};
    std::vector<double> user_spectrum{0.7, 0.5, 0.4, 0.3, 0.15};
    bool reinforce_with_benign = true; ///< false trains ReinforceLoRA on refusals alone
    std::uint64_t seed = 42;
    MergeConfig merge{0.1, kDefaultTau, 1.0, RankCollapsePolicy::automatic};

    void validate() const;
    /// Unknown keys are rejected.
    static SimConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct SimWorld {
    Matrix base;
    std::array<Matrix, 4> targets; ///< indexed by Task
    std::array<Matrix, 4> inputs;  ///< n×N, indexed by Task
    double harmful_ratio = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] const Matrix& target(Task t) const { return targets[static_cast<std::size_t>(t)]; }
    [[nodiscard]] const Matrix& input(Task t) const { return inputs[static_cast<std::size_t>(t)]; }
    /// W_refuse − W_base: the direction in which safety improves.
    [[nodiscard]] Matrix safety_direction() const { return target(Task::refuse) - base; }

    void validate() const;
};

SimWorld make_world(const SimConfig& cfg, std::size_t layer = 0);

struct SimAdapter {
    AdapterRole role;
    AdapterPair pair;
    bool trainable = true;
};

/// LoRA-style initialization: B = 0, A Gaussian. Deterministic in (seed, layer, role).
SimAdapter make_adapter(const SimConfig& cfg, AdapterRole role, std::size_t layer = 0);

struct TaskWeight {
    Task task;
    double weight;
};

double task_loss(const Matrix& W, const Matrix& target, const Matrix& X);
/// ∇_W = (W − T)·X·Xᵀ / N.
Matrix task_gradient(const Matrix& W, const Matrix& target, const Matrix& X);

double objective_loss(const SimWorld& world, const Matrix& W, std::span<const TaskWeight> objective);
Matrix objective_gradient(const SimWorld& world, const Matrix& W, std::span<const TaskWeight> objective);

/// lr_scale / λ_max(Σ_t w_t·X_t X_tᵀ / N_t).
double stable_learning_rate(const SimWorld& world, std::span<const TaskWeight> objective, double lr_scale = 1.0);

/// W_base plus the dense update of every attached adapter.
Matrix effective_weights(const SimWorld& world, std::span<const SimAdapter> adapters);

struct StageResult {
    std::string stage;
    std::vector<double> loss; ///< steps + 1 entries, before each step and after the last
    double learning_rate = 0.0;
    double initial_gradient_norm = 0.0;
    double final_gradient_norm = 0.0;
    /// Safety gradient score of the stage's descent direction (−∇_W) against
    /// W_refuse − W_base, at the first and last step.
    double safety_score_pre = 0.0;
    double safety_score_post = 0.0;
};

/**
 * Gradient descent on the trainable adapters' factors:
 * ∇_B = ∇_W·Aᵀ, ∇_A = Bᵀ·∇_W, updated simultaneously. Frozen adapters stay
 * attached and untouched. Throws ValidationError if the loss rises for 10
 * consecutive steps or stops being finite.
 */
StageResult train_stage(const SimWorld& world, std::vector<SimAdapter>& adapters,
                        std::span<const TaskWeight> objective, std::size_t steps, double lr,
                        std::string stage = "stage");

/// Per-sample descent directions −(W − T)·x_i·x_iᵀ, flattened row-major.
/// Their mean is −∇_W of the task loss.
GradientRecord descent_record(const SimWorld& world, const Matrix& W, Task task, std::string layer = "layer0");

struct SaturationResult {
    double score_pre = 0.0;  ///< harmful-task score at W_base
    double score_post = 0.0; ///< at W_base + buffer
    double benign_norm_base = 0.0;
    double benign_norm_jailbroken = 0.0;
    /// Jailbroken benign gradient projected on the normalized base gradient.
    double projected_jailbroken = 0.0;
};

SaturationResult saturation_experiment(const SimWorld& world, const AdapterPair& buffer,
                                       double epsilon = kDefaultEpsilon);

/// −⟨vec(W), v⟩ / (‖v‖ + ε) with v = W_refuse − W_base: how far an update
/// pushes against safety. Positive means harmful.
double harmful_alignment(const SimWorld& world, const Matrix& update, double epsilon = kDefaultEpsilon);

using TaskLosses = std::array<double, 4>;
TaskLosses evaluate_losses(const SimWorld& world, const Matrix& W);

struct LayerRun {
    std::string name;
    SimWorld world;
    SimAdapter buffer;
    SimAdapter reinforce;
    SimAdapter user;
    SimAdapter baseline_user;
    StageResult buffer_stage{};
    StageResult reinforce_stage{};
    StageResult user_stage{};
    StageResult baseline_stage{};
    SaturationResult saturation{};
    bool buffer_frozen_bitwise = false;
    Matrix defended{};
    Matrix baseline{};
    TaskLosses defended_losses{};
    TaskLosses baseline_losses{};
    double defended_harmful_alignment = 0.0;
    double baseline_harmful_alignment = 0.0;
};

struct PipelineReport {
    SimConfig config;
    std::vector<LayerRun> layers;
    MergeReport merge;
    TaskLosses defended_losses{}; ///< summed over layers
    TaskLosses baseline_losses{};
};

/**
 * Before: buffer on harmful pairs; reinforce on refusals (+ benign) with the
 * buffer attached and frozen. User: user adapter on the (1 − p, p) mix of user
 * and harmful data, buffer attached and frozen. Post: buffer removed, user and
 * reinforce merged. A paired no-defense run trains the user adapter from the
 * same initialization without buffer and without merge.
 */
PipelineReport run_pipeline(const SimConfig& cfg);
PipelineReport run_pipeline(const std::vector<SimWorld>& worlds, const SimConfig& cfg);

nlohmann::ordered_json to_json(const PipelineReport& report);

/// Writes summary.json plus archives for weights, adapters, the safety
/// direction and the harmful-task descent records before/after jailbreaking.
void write_pipeline_outputs(const std::filesystem::path& dir, const PipelineReport& report,
                            const nlohmann::ordered_json& summary);

} // namespace bnr::sim
