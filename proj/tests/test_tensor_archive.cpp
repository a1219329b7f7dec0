// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <bit>
#include <cstring>
#include <limits>

#include <nlohmann/json.hpp>

#include "bnr/adapter.hpp"
#include "bnr/error.hpp"
#include "bnr/tensor_archive.hpp"
#include "support.hpp"

using namespace bnr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load_manifest(const fs::path& dir) {
    return json::parse(test::read_text(dir / "manifest.json"));
}

void save_manifest(const fs::path& dir, const json& manifest) {
    test::write_text(dir / "manifest.json", manifest.dump(2));
}

std::string error_of(const fs::path& dir) {
    try {
        read_archive(dir);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.name == b.name && a.shape == b.shape && a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

Tensor random_tensor(std::mt19937_64& rng, std::string name) {
    const std::size_t rank = test::uniform(rng, 1, 3);
    Tensor t{std::move(name), {}, {}};
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        t.shape.push_back(static_cast<std::int64_t>(test::uniform(rng, 1, 9)));
        count *= static_cast<std::size_t>(t.shape.back());
    }
    // Random finite bit patterns cover subnormals, signed zeros and extremes.
    std::uniform_int_distribution<std::uint32_t> bits;
    for (std::size_t i = 0; i < count; ++i) {
        float v = 0.0f;
        do
            v = std::bit_cast<float>(bits(rng));
        while (!std::isfinite(v));
        t.values.push_back(v);
    }
    return t;
}

/// Reads tensor `index` straight from the bytes on disk, bypassing read_archive.
std::vector<float> reparse(const fs::path& dir, std::size_t index) {
    const json manifest = load_manifest(dir);
    const json& entry = manifest["tensors"][index];
    std::size_t count = 1;
    for (const auto& d : entry["shape"])
        count *= d.get<std::size_t>();
    const std::string blob = test::read_text(dir / entry["blob_file"].get<std::string>());
    const std::size_t offset = entry["byte_offset"].get<std::size_t>();
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset + 4 * i);
        const std::uint32_t u = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

} // namespace

TEST_CASE("identity tensor round-trips through a 16-byte blob") {
    test::TempDir tmp;
    const Tensor eye{"eye", {2, 2}, {1, 0, 0, 1}};
    write_archive(tmp.path(), {eye}, {{"role", "user"}});
    CHECK(fs::file_size(tmp / "weights-0.bin") == 16);
    const json manifest = load_manifest(tmp.path());
    CHECK(manifest["manifest_version"] == 1);
    CHECK(manifest["tensors"][0]["byte_offset"] == 0);
    CHECK(manifest["tensors"][0]["dtype"] == "f32");
    CHECK(manifest["tensors"][0]["blob_file"] == "weights-0.bin");

    const auto back = read_archive(tmp.path());
    REQUIRE(back.tensors.size() == 1);
    CHECK(bitwise_equal(back.tensors[0], eye));
    CHECK(back.meta("role") == "user");
}

TEST_CASE("empty archive") {
    test::TempDir tmp;
    write_archive(tmp.path(), std::vector<Tensor>{}, {});
    CHECK(load_manifest(tmp.path())["tensors"].empty());
    const auto back = read_archive(tmp.path());
    CHECK(back.tensors.empty());
    CHECK(back.metadata.empty());
}

TEST_CASE("large tensors pack sequentially; verified by independent re-parse") {
    test::TempDir tmp;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> dist(-1, 1);
    std::vector<Tensor> tensors{{"a", {32, 4096}, {}}, {"b", {4096, 32}, {}}, {"c", {4096, 4096}, {}}};
    for (auto& t : tensors) {
        t.values.resize(t.element_count());
        for (auto& v : t.values)
            v = dist(rng);
    }
    write_archive(tmp.path(), tensors, {});

    const json manifest = load_manifest(tmp.path());
    const std::uint64_t ab = 32ull * 4096 * 4;
    CHECK(manifest["tensors"][0]["byte_offset"] == 0);
    CHECK(manifest["tensors"][1]["byte_offset"] == ab);
    CHECK(manifest["tensors"][2]["byte_offset"] == 2 * ab);
    CHECK(fs::file_size(tmp / "weights-0.bin") == 2 * ab + 4096ull * 4096 * 4);
    for (std::size_t i = 0; i < tensors.size(); ++i)
        CHECK(reparse(tmp.path(), i) == tensors[i].values);

    const auto back = read_archive(tmp.path());
    for (std::size_t i = 0; i < tensors.size(); ++i)
        CHECK(bitwise_equal(back.tensors[i], tensors[i]));
}

TEST_CASE("random archives round-trip bit-exactly") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        test::TempDir tmp;
        std::vector<Tensor> tensors;
        const std::size_t n = test::uniform(rng, 1, 6);
        for (std::size_t i = 0; i < n; ++i)
            tensors.push_back(random_tensor(rng, "t" + std::to_string(i)));
        WriteOptions options;
        options.checksums = trial % 2 == 0;
        options.max_blob_bytes = trial % 3 == 0 ? 64 : 0;
        write_archive(tmp.path(), tensors, {{"trial", std::to_string(trial)}}, options);
        const auto back = read_archive(tmp.path());
        REQUIRE(back.tensors.size() == n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(bitwise_equal(back.tensors[i], tensors[i]));
        CHECK(back.meta("trial") == std::to_string(trial));
    }
}

TEST_CASE("offsets follow sequential packing within a blob") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor> tensors;
        for (std::size_t i = 0; i < 8; ++i)
            tensors.push_back(random_tensor(rng, "t" + std::to_string(i)));
        WriteOptions options;
        options.max_blob_bytes = trial % 2 ? 0 : 200;
        const auto layout = plan_layout(tensors, options);
        for (std::size_t i = 0; i + 1 < layout.size(); ++i) {
            if (layout[i + 1].blob_file == layout[i].blob_file)
                CHECK(layout[i + 1].byte_offset == layout[i].byte_offset + 4 * tensors[i].element_count());
            else
                CHECK(layout[i + 1].byte_offset == 0);
        }
    }
}

TEST_CASE("sharding splits blobs but keeps tensors whole") {
    test::TempDir tmp;
    std::vector<Tensor> tensors{{"a", {4}, {1, 2, 3, 4}}, {"b", {4}, {5, 6, 7, 8}}, {"c", {8}, std::vector<float>(8, 1)}};
    WriteOptions options;
    options.max_blob_bytes = 20;
    write_archive(tmp.path(), tensors, {}, options);
    const json manifest = load_manifest(tmp.path());
    CHECK(manifest["tensors"][0]["blob_file"] == "weights-0.bin");
    CHECK(manifest["tensors"][1]["blob_file"] == "weights-1.bin");
    CHECK(manifest["tensors"][2]["blob_file"] == "weights-2.bin");
    CHECK(fs::file_size(tmp / "weights-2.bin") == 32); // larger than the limit, still unsplit
    CHECK(read_archive(tmp.path()).tensors[2].values.size() == 8);
}

TEST_CASE("write rejects bad input") {
    test::TempDir tmp;
    CHECK_THROWS_WITH_AS(write_archive(tmp.path(), {{"x", {1}, {1}}, {"x", {1}, {2}}}, {}), doctest::Contains("duplicate name"),
                         ValidationError);
    CHECK_THROWS_AS(write_archive(tmp.path(), {{"x", {1}, {std::numeric_limits<float>::quiet_NaN()}}}, {}),
                    ValidationError);
    CHECK_THROWS_AS(write_archive(tmp.path(), {{"x", {1}, {std::numeric_limits<float>::infinity()}}}, {}),
                    ValidationError);
    CHECK_THROWS_AS(write_archive(tmp.path(), {{"x", {2, 2}, {1, 2, 3}}}, {}), ValidationError);
    CHECK_THROWS_AS(write_archive(tmp.path(), {{"", {1}, {1}}}, {}), ValidationError);
    CHECK_FALSE(fs::exists(tmp / "manifest.json"));
}

TEST_CASE("write into an unwritable location is an IO error") {
    test::TempDir tmp;
    test::write_text(tmp / "file", "x");
    CHECK_THROWS_AS(write_archive(tmp / "file" / "sub", {{"x", {1}, {1}}}, {}), IoError);
}

TEST_CASE("read rejects corrupted manifests") {
    test::TempDir tmp;
    write_archive(tmp.path(), {{"a", {2, 2}, {1, 2, 3, 4}}, {"b", {2}, {5, 6}}}, {});
    const json good = load_manifest(tmp.path());

    SUBCASE("offset beyond blob end") {
        json m = good;
        m["tensors"][1]["byte_offset"] = 20;
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("offset overflow") != std::string::npos);
    }
    SUBCASE("offset far past the end") {
        json m = good;
        m["tensors"][0]["byte_offset"] = std::numeric_limits<std::uint64_t>::max() - 2;
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("offset overflow") != std::string::npos);
    }
    SUBCASE("shape larger than blob") {
        json m = good;
        m["tensors"][1]["shape"] = {3};
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("offset overflow") != std::string::npos);
    }
    SUBCASE("shape product overflows") {
        json m = good;
        m["tensors"][1]["shape"] = {1ll << 40, 1ll << 40};
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("shape overflow") != std::string::npos);
    }
    SUBCASE("non-positive dimension") {
        json m = good;
        m["tensors"][1]["shape"] = {0};
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("shape overflow") != std::string::npos);
    }
    SUBCASE("version 2") {
        json m = good;
        m["manifest_version"] = 2;
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("unsupported version") != std::string::npos);
    }
    SUBCASE("duplicate names") {
        json m = good;
        m["tensors"][1]["name"] = "a";
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("duplicate name") != std::string::npos);
    }
    SUBCASE("unsupported dtype") {
        json m = good;
        m["tensors"][0]["dtype"] = "f16";
        save_manifest(tmp.path(), m);
        CHECK(error_of(tmp.path()).find("unsupported dtype") != std::string::npos);
    }
    SUBCASE("blob path escaping the archive") {
        json m = good;
        m["tensors"][0]["blob_file"] = "../weights-0.bin";
        save_manifest(tmp.path(), m);
        CHECK_THROWS_AS(read_archive(tmp.path()), ValidationError);
    }
    SUBCASE("not JSON") {
        test::write_text(tmp / "manifest.json", "{ nope");
        CHECK_THROWS_AS(read_archive(tmp.path()), ValidationError);
    }
    SUBCASE("missing blob is an IO error") {
        json m = good;
        m["tensors"][0]["blob_file"] = "weights-7.bin";
        m.erase("crc32");
        save_manifest(tmp.path(), m);
        CHECK_THROWS_AS(read_archive(tmp.path()), IoError);
    }
}

TEST_CASE("missing manifest is an IO error") {
    test::TempDir tmp;
    CHECK_THROWS_WITH_AS(read_archive(tmp / "nothing"), doctest::Contains("missing manifest"), IoError);
}

TEST_CASE("checksums detect a flipped byte and are optional") {
    test::TempDir tmp;
    write_archive(tmp.path(), {{"a", {3}, {1, 2, 3}}}, {});
    std::string blob = test::read_text(tmp / "weights-0.bin");
    blob[5] = static_cast<char>(blob[5] ^ 0x01);
    test::write_text(tmp / "weights-0.bin", blob);
    CHECK(error_of(tmp.path()).find("checksum mismatch") != std::string::npos);

    json m = load_manifest(tmp.path());
    m.erase("crc32");
    save_manifest(tmp.path(), m);
    CHECK_NOTHROW(read_archive(tmp.path()));
}

TEST_CASE("NaN payload on disk is rejected") {
    test::TempDir tmp;
    WriteOptions options;
    options.checksums = false;
    write_archive(tmp.path(), {{"a", {2}, {1, 2}}}, {}, options);
    std::string blob = test::read_text(tmp / "weights-0.bin");
    const std::uint32_t nan_bits = 0x7fc00000u;
    for (int i = 0; i < 4; ++i)
        blob[4 + i] = static_cast<char>((nan_bits >> (8 * i)) & 0xff);
    test::write_text(tmp / "weights-0.bin", blob);
    CHECK(error_of(tmp.path()).find("NaN/Inf payload") != std::string::npos);
}

TEST_CASE("byte order is little-endian") {
    test::TempDir tmp;
    write_archive(tmp.path(), {{"a", {1}, {1.0f}}}, {});
    const std::string blob = test::read_text(tmp / "weights-0.bin");
    // 1.0f = 0x3f800000
    CHECK(static_cast<unsigned char>(blob[0]) == 0x00);
    CHECK(static_cast<unsigned char>(blob[2]) == 0x80);
    CHECK(static_cast<unsigned char>(blob[3]) == 0x3f);
}

TEST_CASE("adapter bundles") {
    test::TempDir tmp;
    std::mt19937_64 rng(2);

    SUBCASE("two layers at rank 32") {
        AdapterBundle bundle{AdapterRole::user, {}};
        bundle.layers.emplace("L0", AdapterPair(test::random_matrix(rng, 48, 32), test::random_matrix(rng, 32, 40)));
        bundle.layers.emplace("L1", AdapterPair(test::random_matrix(rng, 64, 32), test::random_matrix(rng, 32, 16)));
        write_archive(tmp.path(), to_archive(bundle));
        const auto back = load_adapter_bundle(read_archive(tmp.path()), AdapterRole::user);
        CHECK(back.role == AdapterRole::user);
        REQUIRE(back.layers.size() == 2);
        CHECK(back.layers.at("L0").rank() == 32);
        CHECK(back.layers.at("L1").rank() == 32);
        CHECK(back.layers.at("L1").d_out() == 64);
    }
    SUBCASE("rank mismatch") {
        TensorArchive archive;
        archive.tensors = {{"L0.B", {8, 4}, std::vector<float>(32, 1)}, {"L0.A", {3, 16}, std::vector<float>(48, 1)}};
        CHECK_THROWS_WITH_AS(load_adapter_bundle(archive, AdapterRole::user), doctest::Contains("rank mismatch"),
                             ValidationError);
    }
    SUBCASE("rank-1 outer product") {
        TensorArchive archive;
        archive.tensors = {{"L0.B", {4, 1}, {1, 0, 0, 0}}, {"L0.A", {1, 4}, {1, 0, 0, 0}}};
        archive.metadata = {{"layers", "L0"}};
        const auto bundle = load_adapter_bundle(archive, AdapterRole::buffer);
        Matrix expected(4, 4);
        expected(0, 0) = 1;
        CHECK(bundle.layers.at("L0").dense() == expected);
    }
    SUBCASE("missing factor") {
        TensorArchive archive;
        archive.tensors = {{"L0.B", {4, 1}, {1, 0, 0, 0}}};
        CHECK_THROWS_WITH_AS(load_adapter_bundle(archive, AdapterRole::user), doctest::Contains("missing"),
                             ValidationError);
    }
    SUBCASE("checkpoint scaling folds into B") {
        TensorArchive archive;
        archive.tensors = {{"L0.B", {2, 1}, {1, 2}}, {"L0.A", {1, 2}, {3, 4}}};
        archive.metadata = {{"lora_alpha", "64"}, {"rank", "1"}};
        // alpha/r with r read from the factors: 64/1
        const auto bundle = load_adapter_bundle(archive, AdapterRole::user);
        CHECK(bundle.layers.at("L0").B() == Matrix{{64}, {128}});
        CHECK(bundle.layers.at("L0").lora_scaling() == 64);
    }
    SUBCASE("role mismatch") {
        TensorArchive archive;
        archive.tensors = {{"L0.B", {2, 1}, {1, 2}}, {"L0.A", {1, 2}, {3, 4}}};
        archive.metadata = {{"role", "buffer"}};
        CHECK_THROWS_AS(load_adapter_bundle(archive, AdapterRole::user), ValidationError);
    }
}

TEST_CASE("rank 32 with alpha 64 gives a factor of two") {
    std::mt19937_64 rng(8);
    AdapterBundle bundle{AdapterRole::user, {}};
    const AdapterPair raw(test::random_matrix(rng, 8, 32), test::random_matrix(rng, 32, 8));
    bundle.layers.emplace("q", raw);
    auto archive = to_archive(bundle);
    archive.metadata["lora_alpha"] = "64";
    const auto pair = load_adapter_bundle(archive, AdapterRole::user).layers.at("q");
    CHECK(pair.lora_scaling() == 2.0);
    // Float narrowing happens in to_archive; doubling is exact.
    const auto narrowed = to_matrix(*archive.find("q.B"));
    CHECK(pair.B() == 2.0 * narrowed);
}

TEST_CASE("adapter pair validation") {
    CHECK_THROWS_WITH_AS(AdapterPair(Matrix(8, 4), Matrix(3, 16)), doctest::Contains("rank mismatch"), ValidationError);
    CHECK_THROWS_AS(AdapterPair(Matrix(2, 1), Matrix(1, 2), 0.0), ValidationError);
    CHECK_THROWS_AS(AdapterPair(Matrix{{std::numeric_limits<double>::infinity()}}, Matrix{{1}}), ValidationError);
    CHECK_THROWS_AS(AdapterPair(Matrix(), Matrix()), ValidationError);
}

TEST_CASE("matrix conversion") {
    const Matrix m{{1.5, -2}, {0.25, 8}};
    const Tensor t = to_tensor("m", m);
    CHECK(t.shape == std::vector<std::int64_t>{2, 2});
    CHECK(to_matrix(t) == m);
    CHECK_THROWS_AS(to_matrix(Tensor{"v", {4}, {1, 2, 3, 4}}), ValidationError);
}
