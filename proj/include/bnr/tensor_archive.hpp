// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bnr/matrix.hpp"

namespace bnr {

/// A named f32 tensor held in memory, row-major.
struct Tensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> values;

    [[nodiscard]] std::size_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

using Metadata = std::map<std::string, std::string>;

/**
 * On-disk layout of one tensor inside an archive.
 *
 * `byte_offset` is relative to the start of `blob_file`, which is a path
 * relative to the archive directory.
 */
struct TensorDescriptor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::string dtype = "f32";
    std::uint64_t byte_offset = 0;
    std::string blob_file;
};

/// In-memory image of an archive directory.
struct TensorArchive {
    static constexpr int kManifestVersion = 1;

    std::vector<Tensor> tensors;
    Metadata metadata;

    [[nodiscard]] const Tensor* find(const std::string& name) const;
    [[nodiscard]] const Tensor& at(const std::string& name) const;
    [[nodiscard]] std::optional<std::string> meta(const std::string& key) const;
};

struct WriteOptions {
    /// Start a new `weights-<k>.bin` once the current blob would exceed this
    /// many bytes. Zero keeps everything in a single blob.
    std::uint64_t max_blob_bytes = 0;
    /// Record a CRC32 per blob in the manifest.
    bool checksums = true;
};

/// Sequential, unpadded layout for `tensors` under `options`. This is the
/// exact descriptor list `write_archive` puts in the manifest.
std::vector<TensorDescriptor> plan_layout(const std::vector<Tensor>& tensors, const WriteOptions& options = {});

/// Writes `<dir>/manifest.json` and its blob files. Creates `dir` if needed.
/// Throws ValidationError on duplicate names, bad shapes or non-finite values,
/// IoError if the files cannot be written.
void write_archive(const std::filesystem::path& dir, const std::vector<Tensor>& tensors,
                   const Metadata& metadata, const WriteOptions& options = {});
void write_archive(const std::filesystem::path& dir, const TensorArchive& archive,
                   const WriteOptions& options = {});

/// Reads and fully validates an archive directory.
TensorArchive read_archive(const std::filesystem::path& dir);

/// 2-D tensor <-> matrix. Narrowing to f32 rounds to nearest.
Tensor to_tensor(std::string name, const Matrix& m);
Matrix to_matrix(const Tensor& t);

} // namespace bnr
