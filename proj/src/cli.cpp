// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "bnr/adapter.hpp"
#include "bnr/diagnostics.hpp"
#include "bnr/error.hpp"
#include "bnr/lowrank.hpp"
#include "bnr/merge.hpp"
#include "bnr/sandbox.hpp"
#include "bnr/tensor_archive.hpp"

namespace bnr::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
    bool deterministic = false;

    std::string base;
    std::string user;
    std::string reinforce;
    std::string out;
    MergeConfig merge;
    std::string policy = "auto";

    std::string grads;
    std::string safety;
    std::string layers = "all";
    double epsilon = kDefaultEpsilon;
    std::string format = "csv";

    std::string merged;
    double energy_weight = 1.0;

    std::string adapter;
    double tau = kDefaultTau;

    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> harmful_ratio;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

void stamp(ordered_json& j, const Options& opt) {
    if (!opt.deterministic)
        j["generated_at"] = timestamp();
}

std::string format_number(double v) {
    return fmt::format("{:.17g}", v);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError(fmt::format("cannot create directory '{}': {}", path.parent_path().string(), ec.message()));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError(fmt::format("cannot write '{}'", path.string()));
    f << text;
    if (!f)
        throw IoError(fmt::format("error writing '{}'", path.string()));
}

void emit(const Options& opt, const std::string& text, std::ostream& out) {
    if (opt.out.empty())
        out << text;
    else
        write_text(opt.out, text);
}

bool has_factors(const TensorArchive& archive) {
    for (const auto& t : archive.tensors)
        if (t.name.ends_with(".A") || t.name.ends_with(".B"))
            return true;
    return false;
}

AdapterRole archive_role(const TensorArchive& archive, AdapterRole fallback) {
    auto tagged = archive.meta("role");
    return tagged ? parse_role(*tagged) : fallback;
}

/// Dense per-layer matrices: B·A for adapter archives, the tensors themselves otherwise.
std::map<std::string, Matrix> dense_layers(const TensorArchive& archive) {
    std::map<std::string, Matrix> out;
    if (has_factors(archive)) {
        for (const auto& [name, pair] : load_adapter_bundle(archive, archive_role(archive, AdapterRole::user)).layers)
            out.emplace(name, pair.dense());
        return out;
    }
    for (const auto& t : archive.tensors)
        out.emplace(t.name, to_matrix(t));
    return out;
}

int cmd_merge(const Options& opt, std::ostream& out, std::ostream& err) {
    MergeConfig cfg = opt.merge;
    cfg.policy = parse_policy(opt.policy);
    cfg.validate();

    const auto base = read_archive(opt.base);
    const auto user = load_adapter_bundle(read_archive(opt.user), AdapterRole::user);
    const auto reinforce = load_adapter_bundle(read_archive(opt.reinforce), AdapterRole::reinforce);
    auto result = merge_bundles(base, user, reinforce, cfg);

    ordered_json report = to_json(result.report);
    stamp(report, opt);
    for (const auto& layer : result.report.layers)
        if (layer.orthogonalization_skipped)
            err << fmt::format("warning: layer '{}' has effective rank 0; orthogonalization skipped\n", layer.name);

    write_archive(opt.out, result.merged);
    write_text(fs::path(opt.out) / "report.json", report.dump(2) + "\n");
    out << fmt::format("merged {} layer(s) into {}\n", result.report.layers.size(), opt.out);
    return kExitOk;
}

int cmd_score(const Options& opt, std::ostream& out) {
    if (!(opt.epsilon > 0.0))
        throw ValidationError("epsilon must be positive");
    const auto range = LayerRange::parse(opt.layers);
    const auto grads = gradient_record_from_archive(read_archive(opt.grads));
    const auto dir = safety_direction_from_archive(read_archive(opt.safety), opt.epsilon);
    const auto scores = safety_gradient_score(grads, dir, range);

    std::string text;
    if (opt.format == "csv") {
        text = "layer,score\n";
        for (const auto& s : scores)
            text += fmt::format("{},{}\n", s.layer, format_number(s.value));
    } else {
        ordered_json j{{"epsilon", opt.epsilon}, {"layers", ordered_json::array()}};
        for (const auto& s : scores)
            j["layers"].push_back({{"layer", s.layer}, {"score", s.value}});
        stamp(j, opt);
        text = j.dump(2) + "\n";
    }
    emit(opt, text, out);
    return kExitOk;
}

int cmd_energy(const Options& opt, std::ostream& out) {
    if (!(opt.energy_weight > 0.0 && opt.energy_weight <= 1.0))
        throw ValidationError(fmt::format("averaging weight must lie in (0, 1], got {}", opt.energy_weight));
    const auto merged_archive = read_archive(opt.merged);
    const auto user_archive = read_archive(opt.user);
    const auto merged = dense_layers(merged_archive);
    const auto user = dense_layers(user_archive);
    std::optional<std::map<std::string, Matrix>> base;
    if (!opt.base.empty())
        base = dense_layers(read_archive(opt.base));

    ordered_json layers = ordered_json::array();
    std::vector<double> retains;
    std::vector<double> damages;
    for (const auto& [name, W_U] : user) {
        auto it = merged.find(name);
        if (it == merged.end())
            throw ValidationError(fmt::format("layer '{}' missing from merged archive", name));
        Matrix W_hat = it->second;
        if (base) {
            auto b = base->find(name);
            if (b == base->end())
                throw ValidationError(fmt::format("layer '{}' missing from base archive", name));
            if (b->second.rows() != W_hat.rows() || b->second.cols() != W_hat.cols())
                throw ValidationError(fmt::format("shape mismatch in layer '{}'", name));
            W_hat -= b->second;
        }
        if (W_hat.rows() != W_U.rows() || W_hat.cols() != W_U.cols())
            throw ValidationError(fmt::format("shape mismatch in layer '{}'", name));
        if (opt.energy_weight != 1.0)
            W_hat *= 1.0 / opt.energy_weight;
        const auto m = energy_metrics(W_hat, W_U);
        retains.push_back(m.retain);
        damages.push_back(m.damage);
        layers.push_back({{"layer", name}, {"retain", m.retain}, {"damage", m.damage}});
    }
    ordered_json j{{"layers", std::move(layers)},
                   {"mean_retain", layer_average(retains)},
                   {"mean_damage", layer_average(damages)}};
    stamp(j, opt);
    emit(opt, j.dump(2) + "\n", out);
    return kExitOk;
}

int cmd_rank(const Options& opt, std::ostream& out) {
    if (!(opt.tau > 0.0 && opt.tau < 1.0))
        throw ValidationError(fmt::format("tau must lie in (0, 1), got {}", opt.tau));
    const auto archive = read_archive(opt.adapter);
    const auto bundle = load_adapter_bundle(archive, archive_role(archive, AdapterRole::user));

    ordered_json layers = ordered_json::array();
    for (const auto& [name, pair] : bundle.layers) {
        const auto sub = effective_subspace(pair, opt.tau);
        layers.push_back({{"layer", name},
                          {"nominal_rank", pair.rank()},
                          {"effective_rank", sub.k},
                          {"rank_collapse", sub.k < pair.rank()},
                          {"threshold_ties", sub.threshold_ties},
                          {"eigenvalues", sub.eigenvalues}});
    }
    ordered_json j{{"tau", opt.tau}, {"layers", std::move(layers)}};
    stamp(j, opt);
    emit(opt, j.dump(2) + "\n", out);
    return kExitOk;
}

int cmd_simulate(const Options& opt, std::ostream& out) {
    sim::SimConfig cfg;
    if (!opt.config.empty()) {
        std::ifstream f(opt.config);
        if (!f)
            throw IoError(fmt::format("cannot open config '{}'", opt.config));
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("config '{}' is not valid JSON: {}", opt.config, e.what()));
        }
        cfg = sim::SimConfig::from_json(j);
    }
    if (opt.seed)
        cfg.seed = *opt.seed;
    if (opt.harmful_ratio)
        cfg.harmful_ratio = *opt.harmful_ratio;
    cfg.validate();

    const auto report = sim::run_pipeline(cfg);
    ordered_json summary = sim::to_json(report);
    stamp(summary, opt);
    sim::write_pipeline_outputs(opt.out, report, summary);

    const auto idx = [](sim::Task t) { return static_cast<std::size_t>(t); };
    out << fmt::format("refuse loss: defended {:.6g}, no defense {:.6g}\n",
                       report.defended_losses[idx(sim::Task::refuse)], report.baseline_losses[idx(sim::Task::refuse)]);
    out << fmt::format("user loss:   defended {:.6g}, no defense {:.6g}\n",
                       report.defended_losses[idx(sim::Task::user)], report.baseline_losses[idx(sim::Task::user)]);
    return kExitOk;
}

void add_deterministic(CLI::App& app, Options& opt) {
    app.add_flag("--deterministic", opt.deterministic, "Omit the generated_at timestamp from reports");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options opt;
    CLI::App app{"Adapter merging, rank diagnostics and safety-gradient analysis"};
    app.name(args.empty() ? "bnr" : fs::path(args.front()).filename().string());
    app.require_subcommand(1);
    add_deterministic(app, opt);

    auto* merge = app.add_subcommand("merge", "Merge user and reinforce adapters into base weights");
    merge->add_option("--base", opt.base, "Base weight archive")->required();
    merge->add_option("--user", opt.user, "User adapter archive")->required();
    merge->add_option("--reinforce", opt.reinforce, "Reinforce adapter archive")->required();
    merge->add_option("--out", opt.out, "Output archive directory")->required();
    merge->add_option("--alpha", opt.merge.alpha, "Orthogonalization strength")->capture_default_str();
    merge->add_option("--tau", opt.merge.tau, "Relative eigenvalue threshold")->capture_default_str();
    merge->add_option("--averaging-weight", opt.merge.averaging_weight, "Weight on the summed update")
        ->capture_default_str();
    merge->add_option("--policy", opt.policy, "auto, always_restrict or never_restrict")->capture_default_str();
    add_deterministic(*merge, opt);

    auto* score = app.add_subcommand("score", "Safety gradient score per layer");
    score->add_option("--grads", opt.grads, "Gradient record archive")->required();
    score->add_option("--safety", opt.safety, "Safety direction archive")->required();
    score->add_option("--layers", opt.layers, "all, N, A-B or A-")->capture_default_str();
    score->add_option("--epsilon", opt.epsilon, "Norm regularizer")->capture_default_str();
    score->add_option("--format", opt.format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    score->add_option("--out", opt.out, "Write the table here instead of stdout");
    add_deterministic(*score, opt);

    auto* energy = app.add_subcommand("energy", "Energy retain and damage of a merged update");
    energy->add_option("--merged", opt.merged, "Merged weights or update archive")->required();
    energy->add_option("--user", opt.user, "User adapter archive")->required();
    energy->add_option("--base", opt.base, "Base weights subtracted from --merged");
    energy->add_option("--averaging-weight", opt.energy_weight,
                       "Undo the merge's averaging: the update is divided by this weight")
        ->capture_default_str();
    energy->add_option("--out", opt.out, "Write the report here instead of stdout");
    add_deterministic(*energy, opt);

    auto* rank = app.add_subcommand("rank", "Effective rank of each adapter layer");
    rank->add_option("--adapter", opt.adapter, "Adapter archive")->required();
    rank->add_option("--tau", opt.tau, "Relative eigenvalue threshold")->capture_default_str();
    rank->add_option("--out", opt.out, "Write the report here instead of stdout");
    add_deterministic(*rank, opt);

    auto* simulate = app.add_subcommand("simulate", "Run the linear sandbox pipeline");
    simulate->add_option("--config", opt.config, "JSON configuration file");
    simulate->add_option("--out", opt.out, "Output directory")->required();
    simulate->add_option("--seed", opt.seed, "Override the configured seed");
    simulate->add_option("--harmful-ratio", opt.harmful_ratio, "Override the configured harmful ratio");
    add_deterministic(*simulate, opt);

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    if (args.empty())
        argv.push_back("bnr");
    for (const auto& a : args)
        argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (merge->parsed())
            return cmd_merge(opt, out, err);
        if (score->parsed())
            return cmd_score(opt, out);
        if (energy->parsed())
            return cmd_energy(opt, out);
        if (rank->parsed())
            return cmd_rank(opt, out);
        return cmd_simulate(opt, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    }
}

} // namespace bnr::cli
