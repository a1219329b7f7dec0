// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "bnr/error.hpp"

namespace bnr {

namespace {

std::size_t parse_index(std::string_view text, std::string_view whole) {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
        throw ValidationError(fmt::format("bad layer range '{}'", whole));
    return value;
}

void check_role(const TensorArchive& archive, std::string_view expected) {
    if (auto role = archive.meta("role"); role && *role != expected)
        throw ValidationError(fmt::format("archive role is '{}', expected '{}'", *role, expected));
}

bool has_factor_tensors(const TensorArchive& archive) {
    return std::any_of(archive.tensors.begin(), archive.tensors.end(), [](const Tensor& t) {
        return t.name.size() > 2 && (t.name.ends_with(".A") || t.name.ends_with(".B"));
    });
}

} // namespace

std::size_t GradientRecord::sample_count() const {
    return samples.empty() ? 0 : samples.front().rows();
}

void GradientRecord::validate() const {
    if (layer_names.size() != samples.size())
        throw ValidationError("gradient record: layer names and sample blocks differ in count");
    for (std::size_t l = 0; l < samples.size(); ++l) {
        if (samples[l].rows() == 0 || samples[l].cols() == 0)
            throw ValidationError(fmt::format("gradient record: layer '{}' is empty", layer_names[l]));
        if (samples[l].rows() != sample_count())
            throw ValidationError(fmt::format("gradient record: layer '{}' has {} samples, expected {}",
                                              layer_names[l], samples[l].rows(), sample_count()));
        if (!all_finite(samples[l]))
            throw ValidationError(fmt::format("gradient record: layer '{}' is not finite", layer_names[l]));
    }
}

void SafetyDirection::validate() const {
    if (!(epsilon > 0.0))
        throw ValidationError("safety direction: epsilon must be positive");
    if (layer_names.size() != directions.size())
        throw ValidationError("safety direction: layer names and vectors differ in count");
    bool nonzero = false;
    for (const auto& v : directions) {
        if (!all_finite(v))
            throw ValidationError("safety direction: non-finite entries");
        nonzero = nonzero || norm2(v) > 0.0;
    }
    if (!nonzero)
        throw ValidationError("safety direction: every layer is zero");
}

const std::vector<double>* SafetyDirection::find(const std::string& layer) const {
    for (std::size_t i = 0; i < layer_names.size(); ++i)
        if (layer_names[i] == layer)
            return &directions[i];
    return nullptr;
}

LayerRange LayerRange::parse(std::string_view text) {
    if (text == "all")
        return all();
    const auto dash = text.find('-');
    if (dash == std::string_view::npos) {
        const auto i = parse_index(text, text);
        return {i, i};
    }
    LayerRange r;
    r.first = parse_index(text.substr(0, dash), text);
    const auto tail = text.substr(dash + 1);
    if (!tail.empty())
        r.last = parse_index(tail, text);
    if (r.last && *r.last < r.first)
        throw ValidationError(fmt::format("empty layer range '{}'", text));
    return r;
}

std::vector<std::size_t> LayerRange::select(std::size_t count) const {
    if (count == 0 || first >= count)
        throw ValidationError(fmt::format("layer range starts at {} but only {} layers exist", first, count));
    const std::size_t end = last ? *last : count - 1;
    if (end >= count)
        throw ValidationError(fmt::format("layer range ends at {} but only {} layers exist", end, count));
    std::vector<std::size_t> out(end - first + 1);
    std::iota(out.begin(), out.end(), first);
    return out;
}

std::vector<LayerValue> safety_gradient_score(const GradientRecord& grads, const SafetyDirection& dir,
                                              const LayerRange& layers) {
    grads.validate();
    dir.validate();
    std::vector<LayerValue> out;
    for (std::size_t l : layers.select(grads.layer_names.size())) {
        const auto& name = grads.layer_names[l];
        const auto* v = dir.find(name);
        if (!v)
            throw ValidationError(fmt::format("layer '{}' missing from safety direction", name));
        const Matrix& g = grads.samples[l];
        if (v->size() != g.cols())
            throw ValidationError(fmt::format("shape mismatch in layer '{}': gradient has {} entries, direction {}",
                                              name, g.cols(), v->size()));
        const double denom = norm2(*v) + dir.epsilon;
        double sum = 0.0;
        for (std::size_t i = 0; i < g.rows(); ++i)
            sum += dot(g.row(i), *v) / denom;
        out.push_back({name, sum / static_cast<double>(g.rows())});
    }
    return out;
}

double projected_gradient(std::span<const double> subject, std::span<const double> reference) {
    if (subject.size() != reference.size())
        throw ValidationError(fmt::format("projected gradient: length mismatch ({} vs {})", subject.size(),
                                          reference.size()));
    const double n = norm2(reference);
    if (!(n > 0.0))
        throw ValidationError("projected gradient: reference gradient is zero");
    return dot(subject, reference) / n;
}

std::vector<double> mean_gradient(const Matrix& samples) {
    std::vector<double> mean(samples.cols(), 0.0);
    for (std::size_t i = 0; i < samples.rows(); ++i)
        for (std::size_t j = 0; j < samples.cols(); ++j)
            mean[j] += samples(i, j);
    for (double& m : mean)
        m /= static_cast<double>(samples.rows());
    return mean;
}

std::vector<LayerValue> gradient_norms(const GradientRecord& grads, const LayerRange& layers) {
    grads.validate();
    std::vector<LayerValue> out;
    for (std::size_t l : layers.select(grads.layer_names.size()))
        out.push_back({grads.layer_names[l], norm2(mean_gradient(grads.samples[l]))});
    return out;
}

EnergyMetrics energy_metrics(const Matrix& W_hat, const Matrix& W_U) {
    if (W_hat.rows() != W_U.rows() || W_hat.cols() != W_U.cols())
        throw ValidationError("energy metrics: shape mismatch");
    const double user_energy = frobenius_inner(W_U, W_U);
    if (!(user_energy > 0.0))
        throw ValidationError("energy metrics: W_U is zero");
    // Proj = c·W_U, so ‖Proj‖²/‖W_U‖² = c².
    const double c = frobenius_inner(W_hat, W_U) / user_energy;
    const double retain = c * c;
    return {retain, std::max(0.0, 1.0 - retain)};
}

double layer_average(std::span<const double> values) {
    if (values.empty())
        throw ValidationError("layer average of no layers");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

GradientRecord gradient_record_from_archive(const TensorArchive& archive) {
    check_role(archive, "gradient");
    GradientRecord record;
    for (const auto& tag : layer_tags(archive)) {
        const Tensor& t = archive.at(tag);
        const std::size_t total = t.element_count();
        const std::size_t n = t.shape.size() >= 2 ? static_cast<std::size_t>(t.shape[0]) : 1;
        std::vector<double> values(t.values.begin(), t.values.end());
        record.layer_names.push_back(tag);
        record.samples.push_back(Matrix::from_values(n, total / n, std::move(values)));
    }
    record.validate();
    return record;
}

TensorArchive to_archive(const GradientRecord& record) {
    record.validate();
    TensorArchive archive;
    std::string tags;
    for (std::size_t l = 0; l < record.layer_names.size(); ++l) {
        archive.tensors.push_back(to_tensor(record.layer_names[l], record.samples[l]));
        tags += (l ? "," : "") + record.layer_names[l];
    }
    archive.metadata = {{"role", "gradient"}, {"layers", tags}};
    return archive;
}

SafetyDirection safety_direction_from_archive(const TensorArchive& archive, double epsilon) {
    check_role(archive, "safety");
    SafetyDirection dir;
    dir.epsilon = epsilon;
    if (has_factor_tensors(archive)) {
        const auto bundle = load_adapter_bundle(archive, AdapterRole::safety);
        for (const auto& tag : layer_tags(archive)) {
            const Matrix dense = bundle.layers.at(tag).dense();
            dir.layer_names.push_back(tag);
            dir.directions.emplace_back(dense.values().begin(), dense.values().end());
        }
    } else {
        for (const auto& tag : layer_tags(archive)) {
            const Tensor& t = archive.at(tag);
            dir.layer_names.push_back(tag);
            dir.directions.emplace_back(t.values.begin(), t.values.end());
        }
    }
    dir.validate();
    return dir;
}

TensorArchive to_archive(const SafetyDirection& direction) {
    direction.validate();
    TensorArchive archive;
    std::string tags;
    for (std::size_t l = 0; l < direction.layer_names.size(); ++l) {
        archive.tensors.push_back(to_tensor(direction.layer_names[l], Matrix::column(direction.directions[l]).transpose()));
        archive.tensors.back().shape = {static_cast<std::int64_t>(direction.directions[l].size())};
        tags += (l ? "," : "") + direction.layer_names[l];
    }
    archive.metadata = {{"role", "safety"}, {"layers", tags}};
    return archive;
}

} // namespace bnr
