// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnr/adapter.hpp"
#include "bnr/matrix.hpp"
#include "bnr/tensor_archive.hpp"

namespace bnr {

inline constexpr double kDefaultEpsilon = 1e-8;

/// Per-sample flattened gradients, one N×P matrix per layer.
struct GradientRecord {
    std::vector<std::string> layer_names;
    std::vector<Matrix> samples;

    [[nodiscard]] std::size_t sample_count() const;
    void validate() const;
};

/// Flattened safety direction per layer.
struct SafetyDirection {
    std::vector<std::string> layer_names;
    std::vector<std::vector<double>> directions;
    double epsilon = kDefaultEpsilon;

    void validate() const;
    [[nodiscard]] const std::vector<double>* find(const std::string& layer) const;
};

/// Inclusive index range into a layer list; open-ended when `last` is empty.
struct LayerRange {
    std::size_t first = 0;
    std::optional<std::size_t> last;

    /// "all", "3", "0-15" or "15-".
    static LayerRange parse(std::string_view text);
    static LayerRange all() { return {}; }

    /// Indices selected out of `count` layers. Throws ValidationError if the
    /// range is empty or reaches past the end.
    [[nodiscard]] std::vector<std::size_t> select(std::size_t count) const;
};

struct LayerValue {
    std::string layer;
    double value = 0.0;
};

/// S^l = (1/N) Σ_i g_i^l · v^l / (‖v^l‖₂ + ε). Layers are matched by name.
std::vector<LayerValue> safety_gradient_score(const GradientRecord& grads, const SafetyDirection& dir,
                                              const LayerRange& layers = LayerRange::all());

/// g_subject · g_reference / ‖g_reference‖₂.
double projected_gradient(std::span<const double> subject, std::span<const double> reference);

/// ‖mean_i g_i^l‖₂ per layer.
std::vector<LayerValue> gradient_norms(const GradientRecord& grads, const LayerRange& layers = LayerRange::all());

/// Mean gradient of one layer across samples.
std::vector<double> mean_gradient(const Matrix& samples);

struct EnergyMetrics {
    double retain = 0.0;
    double damage = 0.0;
};

/// Energy of Ŵ along the W_U direction: retain = ⟨Ŵ, W_U⟩² / ‖W_U‖_F⁴,
/// damage = max(0, 1 − retain).
EnergyMetrics energy_metrics(const Matrix& W_hat, const Matrix& W_U);

double layer_average(std::span<const double> values);

/// Reads an archive tagged `role=gradient`: one tensor per layer whose first
/// dimension is the sample count.
GradientRecord gradient_record_from_archive(const TensorArchive& archive);
TensorArchive to_archive(const GradientRecord& record);

/// Reads an archive tagged `role=safety`. A layer given as `<L>.B`/`<L>.A`
/// contributes vec(B·A) (row-major); a plain tensor `<L>` is flattened as is.
SafetyDirection safety_direction_from_archive(const TensorArchive& archive,
                                              double epsilon = kDefaultEpsilon);
TensorArchive to_archive(const SafetyDirection& direction);

} // namespace bnr
