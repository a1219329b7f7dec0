// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <string>
#include <string_view>

#include "bnr/matrix.hpp"
#include "bnr/tensor_archive.hpp"

namespace bnr {

/**
 * One layer's low-rank factors, W = B·A.
 *
 * `B` is d_out×r and `A` is r×d_in. Any checkpoint scale has already been
 * folded into `B`; `lora_scaling` only records what was applied.
 */
class AdapterPair {
public:
    AdapterPair(Matrix b, Matrix a, double lora_scaling = 1.0);

    [[nodiscard]] const Matrix& B() const noexcept { return mB; }
    [[nodiscard]] const Matrix& A() const noexcept { return mA; }
    [[nodiscard]] std::size_t rank() const noexcept { return mA.rows(); }
    [[nodiscard]] std::size_t d_out() const noexcept { return mB.rows(); }
    [[nodiscard]] std::size_t d_in() const noexcept { return mA.cols(); }
    [[nodiscard]] double lora_scaling() const noexcept { return mScaling; }

    /// Dense update B·A.
    [[nodiscard]] Matrix dense() const;

    bool operator==(const AdapterPair&) const = default;

private:
    Matrix mB;
    Matrix mA;
    double mScaling;
};

enum class AdapterRole { buffer, reinforce, user, safety };

std::string_view to_string(AdapterRole role);
AdapterRole parse_role(std::string_view text);

struct AdapterBundle {
    AdapterRole role = AdapterRole::user;
    /// Keyed by layer tag; std::map keeps iteration sorted by name.
    std::map<std::string, AdapterPair> layers;
};

/**
 * Builds a bundle from an archive holding `<L>.B` and `<L>.A` per layer.
 *
 * Layer tags come from the comma-separated `layers` metadata entry, or are
 * inferred from tensor names when it is absent. If the metadata carries
 * `lora_alpha`, each layer's B is scaled by lora_alpha / r; otherwise an
 * explicit `lora_scaling` factor is used, defaulting to 1. A `role` entry that
 * disagrees with `role` is rejected.
 */
AdapterBundle load_adapter_bundle(const TensorArchive& archive, AdapterRole role);

/// Inverse of load_adapter_bundle: stores the (already scaled) factors with
/// `lora_scaling` = 1 so a reload is exact.
TensorArchive to_archive(const AdapterBundle& bundle);

/// Layer tags from the `layers` metadata key, else from the tensor names
/// (suffixes `.A`/`.B` stripped), deduplicated in first-seen order.
std::vector<std::string> layer_tags(const TensorArchive& archive);

} // namespace bnr
