// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/sandbox.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include <fmt/core.h>

#include "bnr/error.hpp"
#include "bnr/lowrank.hpp"

namespace bnr::sim {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::size_t kDivergenceWindow = 10;
constexpr double kNoiseFloor = 1e-20;

enum class Stream : std::uint32_t { world = 0, buffer = 1, reinforce = 2, user = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, std::size_t layer, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

Matrix gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.values())
        v = dist(rng);
    return m;
}

Matrix orthonormal_columns(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    auto basis = qr_orthonormal_basis(gaussian(rng, rows, cols, 1.0));
    if (basis.source_rank != cols)
        throw ValidationError("degenerate random basis");
    return std::move(basis.Q);
}

/// U·diag(spectrum)·(S·V)ᵀ with U, V random orthonormal: a low-rank update
/// whose row space lies inside the columns of `subspace`.
Matrix supported_update(std::mt19937_64& rng, std::size_t out_dim, const Matrix& subspace,
                        std::span<const double> spectrum) {
    const std::size_t k = spectrum.size();
    Matrix left = orthonormal_columns(rng, out_dim, k);
    const Matrix right = subspace * orthonormal_columns(rng, subspace.cols(), k);
    for (std::size_t i = 0; i < out_dim; ++i)
        for (std::size_t j = 0; j < k; ++j)
            left(i, j) *= spectrum[j];
    return times_transpose(left, right);
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

bool bitwise_equal(const AdapterPair& a, const AdapterPair& b) {
    return bitwise_equal(a.B(), b.B()) && bitwise_equal(a.A(), b.A());
}

std::vector<double> flatten(const Matrix& m) {
    return {m.values().begin(), m.values().end()};
}

double direction_score(const SimWorld& world, const Matrix& descent, double epsilon) {
    GradientRecord record{{"layer"}, {Matrix::from_values(1, descent.size(), flatten(descent))}};
    SafetyDirection dir{{"layer"}, {flatten(world.safety_direction())}, epsilon};
    return safety_gradient_score(record, dir).front().value;
}

std::vector<TaskWeight> user_objective(double p) {
    std::vector<TaskWeight> out;
    if (p < 1.0)
        out.push_back({Task::user, 1.0 - p});
    if (p > 0.0)
        out.push_back({Task::harm, p});
    return out;
}

void check_spectrum(const std::vector<double>& spectrum, std::size_t limit, std::string_view what) {
    if (spectrum.empty() || spectrum.size() > limit)
        throw ValidationError(fmt::format("{} spectrum needs between 1 and {} values", what, limit));
    for (double s : spectrum)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ValidationError(fmt::format("{} spectrum values must be positive", what));
}

ordered_json losses_json(const TaskLosses& losses) {
    ordered_json j = ordered_json::object();
    for (Task t : kAllTasks)
        j[std::string(to_string(t))] = losses[static_cast<std::size_t>(t)];
    return j;
}

ordered_json stage_json(const StageResult& s) {
    return {
        {"stage", s.stage},
        {"steps", s.loss.empty() ? 0 : s.loss.size() - 1},
        {"learning_rate", s.learning_rate},
        {"initial_loss", s.loss.front()},
        {"final_loss", s.loss.back()},
        {"initial_gradient_norm", s.initial_gradient_norm},
        {"final_gradient_norm", s.final_gradient_norm},
        {"safety_score_pre", s.safety_score_pre},
        {"safety_score_post", s.safety_score_post},
        {"loss_trajectory", s.loss},
    };
}

} // namespace

std::string_view to_string(Task task) {
    switch (task) {
    case Task::harm:
        return "harm";
    case Task::refuse:
        return "refuse";
    case Task::benign:
        return "benign";
    case Task::user:
        return "user";
    }
    return "unknown";
}

void SimConfig::validate() const {
    if (out_dim == 0 || in_dim == 0 || rank == 0 || samples == 0 || steps == 0 || layers == 0)
        throw ValidationError("simulation dimensions, samples, steps and layers must be positive");
    if (harmful_input_dim == 0 || user_input_dim == 0 || harmful_input_dim + user_input_dim >= in_dim)
        throw ValidationError("harmful and user input subspaces must be non-empty and leave room for benign inputs");
    if (!(harmful_ratio >= 0.0 && harmful_ratio <= 1.0))
        throw ValidationError(fmt::format("harmful_ratio must lie in [0, 1], got {}", harmful_ratio));
    if (!(harm_strength > 0.0) || !(lr_scale > 0.0) || !(init_scale > 0.0))
        throw ValidationError("harm_strength, lr_scale and init_scale must be positive");
    check_spectrum(safety_spectrum, std::min(out_dim, harmful_input_dim), "safety");
    check_spectrum(benign_spectrum, std::min(out_dim, in_dim - harmful_input_dim - user_input_dim), "benign");
    check_spectrum(user_spectrum, std::min(out_dim, user_input_dim), "user");
    merge.validate();
}

SimConfig SimConfig::from_json(const json& j) {
    if (!j.is_object())
        throw ValidationError("simulation config must be a JSON object");
    SimConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "out_dim") cfg.out_dim = value.get<std::size_t>();
            else if (key == "in_dim") cfg.in_dim = value.get<std::size_t>();
            else if (key == "rank") cfg.rank = value.get<std::size_t>();
            else if (key == "samples") cfg.samples = value.get<std::size_t>();
            else if (key == "steps") cfg.steps = value.get<std::size_t>();
            else if (key == "layers") cfg.layers = value.get<std::size_t>();
            else if (key == "harmful_input_dim") cfg.harmful_input_dim = value.get<std::size_t>();
            else if (key == "user_input_dim") cfg.user_input_dim = value.get<std::size_t>();
            else if (key == "lr_scale") cfg.lr_scale = value.get<double>();
            else if (key == "harmful_ratio") cfg.harmful_ratio = value.get<double>();
            else if (key == "harm_strength") cfg.harm_strength = value.get<double>();
            else if (key == "init_scale") cfg.init_scale = value.get<double>();
            else if (key == "safety_spectrum") cfg.safety_spectrum = value.get<std::vector<double>>();
            else if (key == "benign_spectrum") cfg.benign_spectrum = value.get<std::vector<double>>();
            else if (key == "user_spectrum") cfg.user_spectrum = value.get<std::vector<double>>();
            else if (key == "reinforce_with_benign") cfg.reinforce_with_benign = value.get<bool>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "merge") {
                for (const auto& [mk, mv] : value.items()) {
                    if (mk == "alpha") cfg.merge.alpha = mv.get<double>();
                    else if (mk == "tau") cfg.merge.tau = mv.get<double>();
                    else if (mk == "averaging_weight") cfg.merge.averaging_weight = mv.get<double>();
                    else if (mk == "rank_collapse_policy") cfg.merge.policy = parse_policy(mv.get<std::string>());
                    else throw ValidationError(fmt::format("unknown merge config key '{}'", mk));
                }
            } else
                throw ValidationError(fmt::format("unknown config key '{}'", key));
        }
    } catch (const json::exception& e) {
        throw ValidationError(fmt::format("bad simulation config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

ordered_json SimConfig::to_json() const {
    return {
        {"out_dim", out_dim},
        {"in_dim", in_dim},
        {"rank", rank},
        {"samples", samples},
        {"steps", steps},
        {"layers", layers},
        {"harmful_input_dim", harmful_input_dim},
        {"user_input_dim", user_input_dim},
        {"lr_scale", lr_scale},
        {"harmful_ratio", harmful_ratio},
        {"harm_strength", harm_strength},
        {"init_scale", init_scale},
        {"safety_spectrum", safety_spectrum},
        {"benign_spectrum", benign_spectrum},
        {"user_spectrum", user_spectrum},
        {"reinforce_with_benign", reinforce_with_benign},
        {"seed", seed},
        {"merge",
         {{"alpha", merge.alpha},
          {"tau", merge.tau},
          {"averaging_weight", merge.averaging_weight},
          {"rank_collapse_policy", std::string(bnr::to_string(merge.policy))}}},
    };
}

void SimWorld::validate() const {
    if (!(harmful_ratio >= 0.0 && harmful_ratio <= 1.0))
        throw ValidationError("harmful ratio must lie in [0, 1]");
    for (Task t : kAllTasks) {
        if (target(t).rows() != base.rows() || target(t).cols() != base.cols())
            throw ValidationError(fmt::format("target '{}' does not match the base shape", to_string(t)));
        if (input(t).rows() != base.cols() || input(t).cols() == 0)
            throw ValidationError(fmt::format("inputs of '{}' must be n×N with N ≥ 1", to_string(t)));
    }
    const double floor = 0.1 * frobenius_norm(base);
    for (std::size_t i = 0; i < kAllTasks.size(); ++i)
        for (std::size_t j = i + 1; j < kAllTasks.size(); ++j)
            if (frobenius_norm(targets[i] - targets[j]) <= floor)
                throw ValidationError(fmt::format("targets '{}' and '{}' are not distinguishable",
                                                  to_string(kAllTasks[i]), to_string(kAllTasks[j])));
}

SimWorld make_world(const SimConfig& cfg, std::size_t layer) {
    cfg.validate();
    auto rng = make_rng(cfg.seed, layer, Stream::world);
    const std::size_t m = cfg.out_dim;
    const std::size_t n = cfg.in_dim;

    SimWorld world;
    world.seed = cfg.seed;
    world.harmful_ratio = cfg.harmful_ratio;
    world.base = gaussian(rng, m, n, 1.0 / std::sqrt(static_cast<double>(n)));

    const Matrix inputs = orthonormal_columns(rng, n, n);
    const std::size_t h = cfg.harmful_input_dim;
    const std::size_t u = cfg.user_input_dim;
    const Matrix harmful = inputs.columns(0, h);
    const Matrix user = inputs.columns(h, u);
    const Matrix benign = inputs.columns(h + u, n - h - u);

    const Matrix safety = supported_update(rng, m, harmful, cfg.safety_spectrum);
    const Matrix benign_update = supported_update(rng, m, benign, cfg.benign_spectrum);
    const Matrix user_update = supported_update(rng, m, user, cfg.user_spectrum);

    auto idx = [](Task t) { return static_cast<std::size_t>(t); };
    world.targets[idx(Task::refuse)] = world.base + safety;
    world.targets[idx(Task::harm)] = world.base - cfg.harm_strength * safety;
    world.targets[idx(Task::benign)] = world.base + benign_update;
    world.targets[idx(Task::user)] = world.base + user_update;

    const std::size_t N = cfg.samples;
    world.inputs[idx(Task::harm)] = harmful * gaussian(rng, h, N, 1.0);
    world.inputs[idx(Task::refuse)] = world.inputs[idx(Task::harm)];
    world.inputs[idx(Task::user)] = user * gaussian(rng, u, N, 1.0);
    world.inputs[idx(Task::benign)] = benign * gaussian(rng, benign.cols(), N, 1.0);

    world.validate();
    return world;
}

SimAdapter make_adapter(const SimConfig& cfg, AdapterRole role, std::size_t layer) {
    Stream stream = Stream::user;
    if (role == AdapterRole::buffer)
        stream = Stream::buffer;
    else if (role == AdapterRole::reinforce)
        stream = Stream::reinforce;
    auto rng = make_rng(cfg.seed, layer, stream);
    Matrix A = gaussian(rng, cfg.rank, cfg.in_dim, cfg.init_scale / std::sqrt(static_cast<double>(cfg.in_dim)));
    return {role, AdapterPair(Matrix(cfg.out_dim, cfg.rank), std::move(A)), true};
}

double task_loss(const Matrix& W, const Matrix& target, const Matrix& X) {
    const Matrix residual = (W - target) * X;
    return 0.5 * frobenius_inner(residual, residual) / static_cast<double>(X.cols());
}

Matrix task_gradient(const Matrix& W, const Matrix& target, const Matrix& X) {
    Matrix g = times_transpose((W - target) * X, X);
    g *= 1.0 / static_cast<double>(X.cols());
    return g;
}

double objective_loss(const SimWorld& world, const Matrix& W, std::span<const TaskWeight> objective) {
    double total = 0.0;
    for (const auto& [task, weight] : objective)
        if (weight != 0.0)
            total += weight * task_loss(W, world.target(task), world.input(task));
    return total;
}

Matrix objective_gradient(const SimWorld& world, const Matrix& W, std::span<const TaskWeight> objective) {
    Matrix total(W.rows(), W.cols());
    for (const auto& [task, weight] : objective)
        if (weight != 0.0)
            total += weight * task_gradient(W, world.target(task), world.input(task));
    return total;
}

double stable_learning_rate(const SimWorld& world, std::span<const TaskWeight> objective, double lr_scale) {
    const std::size_t n = world.base.cols();
    Matrix moment(n, n);
    for (const auto& [task, weight] : objective) {
        const Matrix& X = world.input(task);
        moment += (weight / static_cast<double>(X.cols())) * times_transpose(X, X);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            moment(i, j) = moment(j, i);
    const double top = symmetric_eigendecomposition(moment).values.front();
    if (!(top > 0.0))
        throw ValidationError("stage objective has no data");
    return lr_scale / top;
}

Matrix effective_weights(const SimWorld& world, std::span<const SimAdapter> adapters) {
    Matrix W = world.base;
    for (const auto& a : adapters)
        W += a.pair.dense();
    return W;
}

StageResult train_stage(const SimWorld& world, std::vector<SimAdapter>& adapters,
                        std::span<const TaskWeight> objective, std::size_t steps, double lr, std::string stage) {
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ValidationError("learning rate must be positive");
    if (objective.empty())
        throw ValidationError("stage objective is empty");
    if (std::none_of(adapters.begin(), adapters.end(), [](const auto& a) { return a.trainable; }))
        throw ValidationError(fmt::format("stage '{}' has no trainable adapter", stage));

    StageResult result;
    result.stage = std::move(stage);
    result.learning_rate = lr;
    result.loss.reserve(steps + 1);

    Matrix W = effective_weights(world, adapters);
    Matrix grad = objective_gradient(world, W, objective);
    result.loss.push_back(objective_loss(world, W, objective));
    result.initial_gradient_norm = frobenius_norm(grad);
    result.safety_score_pre = direction_score(world, -1.0 * grad, kDefaultEpsilon);

    // Increases below this are rounding noise around an exact fit, not divergence.
    const double noise_floor = kNoiseFloor * (1.0 + objective_loss(world, Matrix(W.rows(), W.cols()), objective));
    std::size_t rising = 0;
    for (std::size_t step = 0; step < steps; ++step) {
        for (auto& adapter : adapters) {
            if (!adapter.trainable)
                continue;
            const Matrix& B = adapter.pair.B();
            const Matrix& A = adapter.pair.A();
            Matrix next_B = B - lr * times_transpose(grad, A);
            Matrix next_A = A - lr * transpose_times(B, grad);
            if (!all_finite(next_B) || !all_finite(next_A))
                throw ValidationError(fmt::format("divergence in stage '{}' at step {}: non-finite factors",
                                                  result.stage, step));
            adapter.pair = AdapterPair(std::move(next_B), std::move(next_A), adapter.pair.lora_scaling());
        }
        W = effective_weights(world, adapters);
        grad = objective_gradient(world, W, objective);
        const double loss = objective_loss(world, W, objective);
        if (!std::isfinite(loss))
            throw ValidationError(fmt::format("divergence in stage '{}' at step {}: loss is not finite",
                                              result.stage, step));
        rising = loss > result.loss.back() + noise_floor ? rising + 1 : 0;
        result.loss.push_back(loss);
        if (rising >= kDivergenceWindow)
            throw ValidationError(fmt::format("divergence in stage '{}': loss rose for {} consecutive steps "
                                              "(now {:.6g} at step {}, lr {:.6g})",
                                              result.stage, rising, loss, step, lr));
    }
    result.final_gradient_norm = frobenius_norm(grad);
    result.safety_score_post = direction_score(world, -1.0 * grad, kDefaultEpsilon);
    return result;
}

GradientRecord descent_record(const SimWorld& world, const Matrix& W, Task task, std::string layer) {
    const Matrix& X = world.input(task);
    const Matrix residual = (W - world.target(task)) * X; // m×N
    const std::size_t m = W.rows();
    const std::size_t n = W.cols();
    Matrix samples(X.cols(), m * n);
    for (std::size_t s = 0; s < X.cols(); ++s)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                samples(s, i * n + j) = -residual(i, s) * X(j, s);
    return {{std::move(layer)}, {std::move(samples)}};
}

SaturationResult saturation_experiment(const SimWorld& world, const AdapterPair& buffer, double epsilon) {
    const Matrix jailbroken = world.base + buffer.dense();
    const SafetyDirection dir{{"layer0"}, {flatten(world.safety_direction())}, epsilon};

    SaturationResult out;
    out.score_pre = safety_gradient_score(descent_record(world, world.base, Task::harm), dir).front().value;
    out.score_post = safety_gradient_score(descent_record(world, jailbroken, Task::harm), dir).front().value;

    const auto benign_base = descent_record(world, world.base, Task::benign);
    const auto benign_jail = descent_record(world, jailbroken, Task::benign);
    out.benign_norm_base = gradient_norms(benign_base).front().value;
    out.benign_norm_jailbroken = gradient_norms(benign_jail).front().value;
    out.projected_jailbroken =
        projected_gradient(mean_gradient(benign_jail.samples.front()), mean_gradient(benign_base.samples.front()));
    return out;
}

double harmful_alignment(const SimWorld& world, const Matrix& update, double epsilon) {
    const Matrix v = world.safety_direction();
    return -frobenius_inner(update, v) / (frobenius_norm(v) + epsilon);
}

TaskLosses evaluate_losses(const SimWorld& world, const Matrix& W) {
    TaskLosses out{};
    for (Task t : kAllTasks)
        out[static_cast<std::size_t>(t)] = task_loss(W, world.target(t), world.input(t));
    return out;
}

PipelineReport run_pipeline(const SimConfig& cfg) {
    cfg.validate();
    std::vector<SimWorld> worlds;
    for (std::size_t l = 0; l < cfg.layers; ++l)
        worlds.push_back(make_world(cfg, l));
    return run_pipeline(worlds, cfg);
}

PipelineReport run_pipeline(const std::vector<SimWorld>& worlds, const SimConfig& cfg) {
    cfg.validate();
    if (worlds.empty())
        throw ValidationError("pipeline needs at least one world");

    PipelineReport report;
    report.config = cfg;
    std::vector<LayerMergeReport> merge_reports;

    for (std::size_t l = 0; l < worlds.size(); ++l) {
        const SimWorld& world = worlds[l];
        world.validate();
        if (world.base.rows() != cfg.out_dim || world.base.cols() != cfg.in_dim)
            throw ValidationError("world shape does not match the configuration");

        LayerRun run{fmt::format("layer{}", l),
                     world,
                     make_adapter(cfg, AdapterRole::buffer, l),
                     make_adapter(cfg, AdapterRole::reinforce, l),
                     make_adapter(cfg, AdapterRole::user, l),
                     make_adapter(cfg, AdapterRole::user, l)};

        // Before fine-tuning: temporary jailbreak.
        {
            const std::vector<TaskWeight> objective{{Task::harm, 1.0}};
            std::vector<SimAdapter> attached{run.buffer};
            run.buffer_stage = train_stage(world, attached, objective, cfg.steps,
                                           stable_learning_rate(world, objective, cfg.lr_scale), "buffer");
            run.buffer = attached[0];
            run.buffer.trainable = false;
        }
        run.saturation = saturation_experiment(world, run.buffer.pair);

        // Before fine-tuning: safety reinforcement under the jailbroken state.
        {
            std::vector<TaskWeight> objective{{Task::refuse, 1.0}};
            if (cfg.reinforce_with_benign)
                objective.push_back({Task::benign, 1.0});
            std::vector<SimAdapter> attached{run.buffer, run.reinforce};
            run.reinforce_stage = train_stage(world, attached, objective, cfg.steps,
                                              stable_learning_rate(world, objective, cfg.lr_scale), "reinforce");
            run.reinforce = attached[1];
            run.reinforce.trainable = false;
        }

        // User fine-tuning, defended and undefended from the same initialization.
        const auto objective = user_objective(world.harmful_ratio);
        const double lr = stable_learning_rate(world, objective, cfg.lr_scale);
        {
            std::vector<SimAdapter> attached{run.buffer, run.user};
            run.user_stage = train_stage(world, attached, objective, cfg.steps, lr, "user");
            run.buffer_frozen_bitwise = bitwise_equal(attached[0].pair, run.buffer.pair);
            run.user = attached[1];
        }
        {
            std::vector<SimAdapter> attached{run.baseline_user};
            run.baseline_stage = train_stage(world, attached, objective, cfg.steps, lr, "baseline_user");
            run.baseline_user = attached[0];
        }

        // Post fine-tuning: drop the buffer, merge user and reinforce.
        auto merged = merge_layer(world.base, run.user.pair, run.reinforce.pair.dense(), cfg.merge, run.name);
        merge_reports.push_back(std::move(merged.report));
        run.defended = std::move(merged.merged);
        run.baseline = world.base + run.baseline_user.pair.dense();

        run.defended_losses = evaluate_losses(world, run.defended);
        run.baseline_losses = evaluate_losses(world, run.baseline);
        run.defended_harmful_alignment = harmful_alignment(world, run.user.pair.dense());
        run.baseline_harmful_alignment = harmful_alignment(world, run.baseline_user.pair.dense());
        for (std::size_t t = 0; t < kAllTasks.size(); ++t) {
            report.defended_losses[t] += run.defended_losses[t];
            report.baseline_losses[t] += run.baseline_losses[t];
        }
        report.layers.push_back(std::move(run));
    }
    report.merge = summarize(cfg.merge, std::move(merge_reports));
    return report;
}

ordered_json to_json(const PipelineReport& report) {
    ordered_json layers = ordered_json::array();
    for (const auto& run : report.layers) {
        const auto& sat = run.saturation;
        layers.push_back({
            {"name", run.name},
            {"stages",
             {{"buffer", stage_json(run.buffer_stage)},
              {"reinforce", stage_json(run.reinforce_stage)},
              {"user", stage_json(run.user_stage)},
              {"baseline_user", stage_json(run.baseline_stage)}}},
            {"saturation",
             {{"score_pre", sat.score_pre},
              {"score_post", sat.score_post},
              {"benign_gradient_norm_base", sat.benign_norm_base},
              {"benign_gradient_norm_jailbroken", sat.benign_norm_jailbroken},
              {"projected_jailbroken", sat.projected_jailbroken}}},
            {"buffer_frozen_bitwise", run.buffer_frozen_bitwise},
            {"defended_losses", losses_json(run.defended_losses)},
            {"baseline_losses", losses_json(run.baseline_losses)},
            {"harmful_alignment",
             {{"defended", run.defended_harmful_alignment}, {"baseline", run.baseline_harmful_alignment}}},
        });
    }
    return {
        {"config", report.config.to_json()},
        {"layers", std::move(layers)},
        {"merge", bnr::to_json(report.merge)},
        {"defended_losses", losses_json(report.defended_losses)},
        {"baseline_losses", losses_json(report.baseline_losses)},
    };
}

void write_pipeline_outputs(const fs::path& dir, const PipelineReport& report, const ordered_json& summary) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));

    auto dense_archive = [&](std::string_view role, auto&& pick) {
        TensorArchive archive;
        std::string tags;
        for (const auto& run : report.layers) {
            archive.tensors.push_back(to_tensor(run.name, pick(run)));
            tags += (tags.empty() ? "" : ",") + run.name;
        }
        archive.metadata = {{"role", std::string(role)}, {"layers", tags}};
        return archive;
    };
    auto bundle_archive = [&](AdapterRole role, auto&& pick) {
        AdapterBundle bundle{role, {}};
        for (const auto& run : report.layers)
            bundle.layers.emplace(run.name, pick(run).pair);
        return to_archive(bundle);
    };

    write_archive(dir / "base", dense_archive("base", [](const LayerRun& r) { return r.world.base; }));
    write_archive(dir / "merged", dense_archive("merged", [](const LayerRun& r) { return r.defended; }));
    write_archive(dir / "baseline", dense_archive("merged", [](const LayerRun& r) { return r.baseline; }));
    write_archive(dir / "buffer", bundle_archive(AdapterRole::buffer, [](const LayerRun& r) { return r.buffer; }));
    write_archive(dir / "reinforce",
                  bundle_archive(AdapterRole::reinforce, [](const LayerRun& r) { return r.reinforce; }));
    write_archive(dir / "user", bundle_archive(AdapterRole::user, [](const LayerRun& r) { return r.user; }));
    write_archive(dir / "baseline_user",
                  bundle_archive(AdapterRole::user, [](const LayerRun& r) { return r.baseline_user; }));

    SafetyDirection safety;
    GradientRecord pre;
    GradientRecord post;
    for (const auto& run : report.layers) {
        safety.layer_names.push_back(run.name);
        safety.directions.push_back(flatten(run.world.safety_direction()));
        auto before = descent_record(run.world, run.world.base, Task::harm, run.name);
        auto after = descent_record(run.world, run.world.base + run.buffer.pair.dense(), Task::harm, run.name);
        pre.layer_names.push_back(run.name);
        pre.samples.push_back(std::move(before.samples.front()));
        post.layer_names.push_back(run.name);
        post.samples.push_back(std::move(after.samples.front()));
    }
    write_archive(dir / "safety", to_archive(safety));
    write_archive(dir / "gradients_pre", to_archive(pre));
    write_archive(dir / "gradients_post", to_archive(post));

    std::ofstream out(dir / "summary.json", std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("cannot write '{}'", (dir / "summary.json").string()));
    out << summary.dump(2) << '\n';
    if (!out)
        throw IoError(fmt::format("error writing '{}'", (dir / "summary.json").string()));
}

} // namespace bnr::sim
