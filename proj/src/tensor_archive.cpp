// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/tensor_archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "bnr/error.hpp"

namespace bnr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kElementBytes = 4;

std::string blob_name(std::size_t index) {
    return fmt::format("weights-{}.bin", index);
}

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little)
        return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::uint32_t crc_of(const std::vector<char>& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay within range.
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

/// Element count of `shape`, or nullopt on overflow / non-positive dims.
std::optional<std::uint64_t> checked_count(const std::vector<std::int64_t>& shape) {
    std::uint64_t count = 1;
    for (std::int64_t d : shape) {
        if (d <= 0)
            return std::nullopt;
        const auto ud = static_cast<std::uint64_t>(d);
        if (count > std::numeric_limits<std::uint64_t>::max() / kElementBytes / ud)
            return std::nullopt;
        count *= ud;
    }
    return count;
}

void validate_tensor(const Tensor& t) {
    const auto count = checked_count(t.shape);
    if (!count)
        throw ValidationError(fmt::format("tensor '{}': invalid shape", t.name));
    if (*count != t.values.size())
        throw ValidationError(fmt::format("tensor '{}': shape holds {} elements but {} values given", t.name,
                                          *count, t.values.size()));
    for (float v : t.values)
        if (!std::isfinite(v))
            throw ValidationError(fmt::format("tensor '{}': non-finite value", t.name));
}

void append_values(std::vector<char>& blob, const std::vector<float>& values) {
    const std::size_t start = blob.size();
    blob.resize(start + values.size() * kElementBytes);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(blob.data() + start + i * kElementBytes, &bits, kElementBytes);
    }
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError(fmt::format("error reading '{}'", path.string()));
    return bytes;
}

void write_file(const fs::path& path, const char* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("cannot create '{}'", path.string()));
    out.write(data, static_cast<std::streamsize>(size));
    if (!out)
        throw IoError(fmt::format("error writing '{}'", path.string()));
}

bool is_safe_relative(const std::string& p) {
    if (p.empty())
        return false;
    const fs::path path(p);
    if (path.is_absolute() || path.has_root_name())
        return false;
    for (const auto& part : path)
        if (part == "..")
            return false;
    return true;
}

TensorDescriptor parse_descriptor(const json& entry) {
    if (!entry.is_object())
        throw ValidationError("manifest: tensor entry is not an object");
    TensorDescriptor d;
    try {
        d.name = entry.at("name").get<std::string>();
        d.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        d.dtype = entry.at("dtype").get<std::string>();
        if (!entry.at("byte_offset").is_number_unsigned())
            throw ValidationError(fmt::format("manifest: tensor '{}' has a negative or non-integer byte_offset",
                                              d.name));
        d.byte_offset = entry.at("byte_offset").get<std::uint64_t>();
        d.blob_file = entry.at("blob_file").get<std::string>();
    } catch (const json::exception& e) {
        throw ValidationError(fmt::format("manifest: malformed tensor entry ({})", e.what()));
    }
    if (d.dtype != "f32")
        throw ValidationError(fmt::format("unsupported dtype '{}' for tensor '{}'", d.dtype, d.name));
    if (!is_safe_relative(d.blob_file))
        throw ValidationError(fmt::format("tensor '{}': blob_file must be a relative path inside the archive",
                                          d.name));
    return d;
}

} // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (auto d : shape)
        n *= static_cast<std::size_t>(d);
    return n;
}

const Tensor* TensorArchive::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name)
            return &t;
    return nullptr;
}

const Tensor& TensorArchive::at(const std::string& name) const {
    if (const Tensor* t = find(name))
        return *t;
    throw ValidationError(fmt::format("tensor '{}' not found in archive", name));
}

std::optional<std::string> TensorArchive::meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end())
        return std::nullopt;
    return it->second;
}

std::vector<TensorDescriptor> plan_layout(const std::vector<Tensor>& tensors, const WriteOptions& options) {
    std::vector<TensorDescriptor> layout;
    layout.reserve(tensors.size());
    std::size_t blob = 0;
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const std::uint64_t bytes = t.element_count() * kElementBytes;
        if (options.max_blob_bytes > 0 && offset > 0 && offset + bytes > options.max_blob_bytes) {
            ++blob;
            offset = 0;
        }
        layout.push_back({t.name, t.shape, "f32", offset, blob_name(blob)});
        offset += bytes;
    }
    return layout;
}

void write_archive(const fs::path& dir, const std::vector<Tensor>& tensors, const Metadata& metadata,
                   const WriteOptions& options) {
    std::set<std::string> names;
    for (const auto& t : tensors) {
        if (t.name.empty())
            throw ValidationError("tensor name must not be empty");
        if (!names.insert(t.name).second)
            throw ValidationError(fmt::format("duplicate name '{}'", t.name));
        validate_tensor(t);
    }

    const auto layout = plan_layout(tensors, options);
    std::map<std::string, std::vector<char>> blobs;
    blobs[blob_name(0)];
    for (std::size_t i = 0; i < tensors.size(); ++i)
        append_values(blobs[layout[i].blob_file], tensors[i].values);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));

    json manifest = json::object();
    manifest["manifest_version"] = TensorArchive::kManifestVersion;
    json entries = json::array();
    for (const auto& d : layout)
        entries.push_back({{"name", d.name},
                           {"shape", d.shape},
                           {"dtype", d.dtype},
                           {"byte_offset", d.byte_offset},
                           {"blob_file", d.blob_file}});
    manifest["tensors"] = std::move(entries);
    manifest["metadata"] = metadata;
    if (options.checksums) {
        json crcs = json::object();
        for (const auto& [name, bytes] : blobs)
            crcs[name] = crc_of(bytes);
        manifest["crc32"] = std::move(crcs);
    }

    for (const auto& [name, bytes] : blobs)
        write_file(dir / name, bytes.data(), bytes.size());
    const std::string text = manifest.dump(2) + "\n";
    write_file(dir / "manifest.json", text.data(), text.size());
}

void write_archive(const fs::path& dir, const TensorArchive& archive, const WriteOptions& options) {
    write_archive(dir, archive.tensors, archive.metadata, options);
}

TensorArchive read_archive(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw IoError(fmt::format("missing manifest: '{}'", manifest_path.string()));
    const auto text = read_file(manifest_path);

    json manifest;
    try {
        manifest = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ValidationError(fmt::format("manifest is not valid JSON: {}", e.what()));
    }
    if (!manifest.is_object() || !manifest.contains("manifest_version") || !manifest.contains("tensors"))
        throw ValidationError("manifest lacks manifest_version or tensors");
    if (!manifest["manifest_version"].is_number_integer() ||
        manifest["manifest_version"].get<std::int64_t>() != TensorArchive::kManifestVersion)
        throw ValidationError(fmt::format("unsupported version {}", manifest["manifest_version"].dump()));
    if (!manifest["tensors"].is_array())
        throw ValidationError("manifest: tensors must be an array");

    TensorArchive archive;
    if (manifest.contains("metadata")) {
        try {
            archive.metadata = manifest["metadata"].get<Metadata>();
        } catch (const json::exception&) {
            throw ValidationError("manifest: metadata must be a string-to-string map");
        }
    }

    std::map<std::string, std::vector<char>> blobs;
    auto blob = [&](const std::string& name) -> const std::vector<char>& {
        auto it = blobs.find(name);
        if (it == blobs.end())
            it = blobs.emplace(name, read_file(dir / name)).first;
        return it->second;
    };

    if (manifest.contains("crc32")) {
        const json& crcs = manifest["crc32"];
        if (!crcs.is_object())
            throw ValidationError("manifest: crc32 must be an object keyed by blob file");
        for (const auto& [name, value] : crcs.items()) {
            if (!is_safe_relative(name) || !value.is_number_unsigned())
                throw ValidationError(fmt::format("manifest: bad crc32 entry '{}'", name));
            if (crc_of(blob(name)) != value.get<std::uint32_t>())
                throw ValidationError(fmt::format("checksum mismatch in '{}'", name));
        }
    }

    std::set<std::string> names;
    for (const json& entry : manifest["tensors"]) {
        const TensorDescriptor d = parse_descriptor(entry);
        if (!names.insert(d.name).second)
            throw ValidationError(fmt::format("duplicate name '{}'", d.name));
        const auto count = checked_count(d.shape);
        if (!count)
            throw ValidationError(fmt::format("shape overflow for tensor '{}'", d.name));
        const std::uint64_t bytes = *count * kElementBytes;
        const auto& data = blob(d.blob_file);
        if (d.byte_offset > data.size() || bytes > data.size() - d.byte_offset)
            throw ValidationError(fmt::format("offset overflow for tensor '{}': needs bytes [{}, {}) of '{}' ({} bytes)",
                                              d.name, d.byte_offset, d.byte_offset + bytes, d.blob_file,
                                              data.size()));

        Tensor t{d.name, d.shape, std::vector<float>(*count)};
        for (std::uint64_t i = 0; i < *count; ++i) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, data.data() + d.byte_offset + i * kElementBytes, kElementBytes);
            t.values[i] = std::bit_cast<float>(to_little_endian(bits));
            if (!std::isfinite(t.values[i]))
                throw ValidationError(fmt::format("NaN/Inf payload in tensor '{}'", d.name));
        }
        archive.tensors.push_back(std::move(t));
    }
    return archive;
}

Tensor to_tensor(std::string name, const Matrix& m) {
    Tensor t{std::move(name),
             {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
             std::vector<float>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i)
        t.values[i] = static_cast<float>(m.values()[i]);
    return t;
}

Matrix to_matrix(const Tensor& t) {
    if (t.shape.size() != 2)
        throw ValidationError(fmt::format("tensor '{}' is not 2-D", t.name));
    std::vector<double> values(t.values.begin(), t.values.end());
    return Matrix::from_values(static_cast<std::size_t>(t.shape[0]), static_cast<std::size_t>(t.shape[1]),
                               std::move(values));
}

} // namespace bnr
