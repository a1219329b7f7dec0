// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/adapter.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/core.h>

#include "bnr/error.hpp"

namespace bnr {

namespace {

double parse_positive(const std::string& key, const std::string& text) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value) || value <= 0.0)
        throw ValidationError(fmt::format("metadata '{}' must be a positive number, got '{}'", key, text));
    return value;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

} // namespace

AdapterPair::AdapterPair(Matrix b, Matrix a, double lora_scaling)
    : mB(std::move(b)), mA(std::move(a)), mScaling(lora_scaling) {
    if (mB.cols() != mA.rows())
        throw ValidationError(fmt::format("rank mismatch: B is {}x{} but A is {}x{}", mB.rows(), mB.cols(),
                                          mA.rows(), mA.cols()));
    if (mA.rows() == 0 || mB.rows() == 0 || mA.cols() == 0)
        throw ValidationError("adapter factors must be non-empty");
    if (!all_finite(mB) || !all_finite(mA))
        throw ValidationError("adapter factors contain non-finite values");
    if (!std::isfinite(mScaling) || mScaling <= 0.0)
        throw ValidationError("lora scaling must be positive");
}

Matrix AdapterPair::dense() const {
    return mB * mA;
}

std::string_view to_string(AdapterRole role) {
    switch (role) {
    case AdapterRole::buffer:
        return "buffer";
    case AdapterRole::reinforce:
        return "reinforce";
    case AdapterRole::user:
        return "user";
    case AdapterRole::safety:
        return "safety";
    }
    return "unknown";
}

AdapterRole parse_role(std::string_view text) {
    for (auto role : {AdapterRole::buffer, AdapterRole::reinforce, AdapterRole::user, AdapterRole::safety})
        if (to_string(role) == text)
            return role;
    throw ValidationError(fmt::format("unknown adapter role '{}'", text));
}

std::vector<std::string> layer_tags(const TensorArchive& archive) {
    std::vector<std::string> tags;
    auto add = [&](std::string tag) {
        if (!tag.empty() && std::find(tags.begin(), tags.end(), tag) == tags.end())
            tags.push_back(std::move(tag));
    };
    if (auto listed = archive.meta("layers")) {
        std::stringstream ss(*listed);
        std::string tag;
        while (std::getline(ss, tag, ','))
            add(tag);
        return tags;
    }
    for (const auto& t : archive.tensors) {
        if (ends_with(t.name, ".A") || ends_with(t.name, ".B"))
            add(t.name.substr(0, t.name.size() - 2));
        else
            add(t.name);
    }
    return tags;
}

AdapterBundle load_adapter_bundle(const TensorArchive& archive, AdapterRole role) {
    if (auto tagged = archive.meta("role"); tagged && *tagged != to_string(role))
        throw ValidationError(fmt::format("archive role is '{}', expected '{}'", *tagged, to_string(role)));

    std::optional<double> lora_alpha;
    double explicit_scaling = 1.0;
    if (auto v = archive.meta("lora_alpha"))
        lora_alpha = parse_positive("lora_alpha", *v);
    else if (auto s = archive.meta("lora_scaling"))
        explicit_scaling = parse_positive("lora_scaling", *s);

    AdapterBundle bundle;
    bundle.role = role;
    for (const auto& tag : layer_tags(archive)) {
        const Tensor* b = archive.find(tag + ".B");
        const Tensor* a = archive.find(tag + ".A");
        if (!b || !a)
            throw ValidationError(fmt::format("layer '{}': missing {}", tag, !b ? "B" : "A"));
        Matrix B = to_matrix(*b);
        Matrix A = to_matrix(*a);
        if (B.cols() != A.rows())
            throw ValidationError(fmt::format("layer '{}': rank mismatch (B has {} columns, A has {} rows)", tag,
                                              B.cols(), A.rows()));
        const double scaling = lora_alpha ? *lora_alpha / static_cast<double>(A.rows()) : explicit_scaling;
        if (scaling != 1.0)
            B *= scaling;
        bundle.layers.emplace(tag, AdapterPair(std::move(B), std::move(A), scaling));
    }
    return bundle;
}

TensorArchive to_archive(const AdapterBundle& bundle) {
    TensorArchive archive;
    std::string tags;
    for (const auto& [tag, pair] : bundle.layers) {
        archive.tensors.push_back(to_tensor(tag + ".B", pair.B()));
        archive.tensors.push_back(to_tensor(tag + ".A", pair.A()));
        if (!tags.empty())
            tags += ',';
        tags += tag;
    }
    archive.metadata["role"] = std::string(to_string(bundle.role));
    archive.metadata["layers"] = tags;
    return archive;
}

} // namespace bnr
