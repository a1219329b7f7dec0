// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>

#include "bnr/diagnostics.hpp"
#include "bnr/error.hpp"
#include "support.hpp"

using namespace bnr;

namespace {

GradientRecord record(std::vector<std::vector<double>> samples, std::string layer = "L0") {
    const std::size_t n = samples.size();
    const std::size_t p = samples.front().size();
    std::vector<double> flat;
    for (const auto& s : samples)
        flat.insert(flat.end(), s.begin(), s.end());
    return {{std::move(layer)}, {Matrix::from_values(n, p, flat)}};
}

SafetyDirection direction(std::vector<double> v, double eps = kDefaultEpsilon, std::string layer = "L0") {
    return {{std::move(layer)}, {std::move(v)}, eps};
}

double score(const GradientRecord& g, const SafetyDirection& d) {
    return safety_gradient_score(g, d).front().value;
}

} // namespace

TEST_CASE("safety gradient score examples") {
    CHECK(std::abs(score(record({{3, 4}}), direction({3, 4})) - 25.0 / (5.0 + 1e-8)) <= 1e-9);
    CHECK(std::abs(score(record({{3, 4}}), direction({3, 4})) - 5.0) <= 1e-8);
    CHECK(score(record({{4, -3}}), direction({3, 4})) == 0.0);
    CHECK(score(record({{3, 4}, {-3, -4}}), direction({3, 4})) == 0.0);
}

TEST_CASE("safety gradient score errors and layer selection") {
    GradientRecord g{{"a", "b", "c"}, {Matrix{{1, 0}}, Matrix{{0, 2}}, Matrix{{1, 1}}}};
    SafetyDirection d{{"c", "b", "a"}, {{1, 1}, {0, 1}, {1, 0}}, kDefaultEpsilon};
    const auto all = safety_gradient_score(g, d);
    REQUIRE(all.size() == 3);
    CHECK(all[1].layer == "b");
    CHECK(std::abs(all[1].value - 2.0 / (1 + 1e-8)) <= 1e-12);
    const auto tail = safety_gradient_score(g, d, LayerRange::parse("1-"));
    REQUIRE(tail.size() == 2);
    CHECK(tail[0].layer == "b");
    CHECK(safety_gradient_score(g, d, LayerRange::parse("2")).front().layer == "c");

    CHECK_THROWS_AS(safety_gradient_score(g, d, LayerRange::parse("3")), ValidationError);
    CHECK_THROWS_AS(safety_gradient_score(g, d, LayerRange::parse("0-5")), ValidationError);
    SafetyDirection wrong{{"a", "b", "c"}, {{1, 0}, {1, 0, 0}, {1, 1}}, kDefaultEpsilon};
    CHECK_THROWS_WITH_AS(safety_gradient_score(g, wrong), doctest::Contains("'b'"), ValidationError);
    SafetyDirection missing{{"a"}, {{1, 0}}, kDefaultEpsilon};
    CHECK_THROWS_WITH_AS(safety_gradient_score(g, missing), doctest::Contains("'b'"), ValidationError);
    CHECK_THROWS_AS(score(record({{1}}), direction({0})), ValidationError);
    CHECK_THROWS_AS(score(record({{1}}), direction({1}, 0.0)), ValidationError);
}

TEST_CASE("layer ranges") {
    CHECK(LayerRange::parse("all").select(3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(LayerRange::parse("0-15").select(20).size() == 16);
    CHECK(LayerRange::parse("15-").select(20) == std::vector<std::size_t>{15, 16, 17, 18, 19});
    CHECK(LayerRange::parse("4").select(5) == std::vector<std::size_t>{4});
    CHECK_THROWS_AS(LayerRange::parse("5-2"), ValidationError);
    CHECK_THROWS_AS(LayerRange::parse("x"), ValidationError);
    CHECK_THROWS_AS(LayerRange::parse(""), ValidationError);
    CHECK_THROWS_AS(LayerRange::parse("-3"), ValidationError);
    CHECK_THROWS_AS((void)LayerRange::all().select(0), ValidationError);
}

TEST_CASE("score is linear in g and scale-aware in v") {
    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> unit(0.1, 10);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = test::uniform(rng, 1, 20);
        const std::size_t n = test::uniform(rng, 1, 8);
        const Matrix g = test::random_matrix(rng, n, p);
        const Matrix vm = test::random_matrix(rng, 1, p);
        const std::vector<double> v(vm.values().begin(), vm.values().end());
        const double base = score({{"L"}, {g}}, direction(v, kDefaultEpsilon, "L"));

        const double c = unit(rng);
        const double scaled_g = score({{"L"}, {c * g}}, direction(v, kDefaultEpsilon, "L"));
        CHECK(std::abs(scaled_g - c * base) <= 1e-12 * std::max(1.0, std::abs(c * base)));

        std::vector<double> cv = v;
        for (double& x : cv)
            x *= c;
        const double scaled_v = score({{"L"}, {g}}, direction(cv, kDefaultEpsilon, "L"));
        const double nv = norm2(v);
        const double predicted = (c * nv / (c * nv + kDefaultEpsilon)) / (nv / (nv + kDefaultEpsilon));
        if (base != 0.0) {
            CHECK(std::abs(scaled_v / base - predicted) <= 1e-12);
            CHECK(std::signbit(scaled_v) == std::signbit(base));
        }
        // ε → 0 limit: invariance up to the vanishing ε correction.
        const double tiny_base = score({{"L"}, {g}}, direction(v, 1e-300, "L"));
        const double tiny_scaled = score({{"L"}, {g}}, direction(cv, 1e-300, "L"));
        CHECK(std::abs(tiny_scaled - tiny_base) <= 1e-13 * std::max(1.0, std::abs(tiny_base)));
    }
}

TEST_CASE("projected gradient") {
    CHECK(projected_gradient(std::vector<double>{0, 2}, std::vector<double>{0, 2}) == 2.0);
    CHECK(projected_gradient(std::vector<double>{1, 0}, std::vector<double>{0, 5}) == 0.0);
    const std::vector<double> ref{1, 2, 2};
    CHECK(std::abs(projected_gradient(std::vector<double>{1, 2, 2}, ref) - 3.0) <= 1e-15); // 3·ref/‖ref‖ with ‖ref‖ = 3
    CHECK_THROWS_AS(projected_gradient(std::vector<double>{1}, std::vector<double>{0}), ValidationError);
    CHECK_THROWS_AS(projected_gradient(std::vector<double>{1}, std::vector<double>{1, 2}), ValidationError);

    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix g = test::random_matrix(rng, 1, test::uniform(rng, 1, 30));
        CHECK(std::abs(projected_gradient(g.values(), g.values()) - norm2(g.values())) <= 1e-12 * norm2(g.values()));
    }
}

TEST_CASE("gradient norms use mean-then-norm") {
    CHECK(gradient_norms(record({{3, 4}})).front().value == 5.0);
    CHECK(gradient_norms(record({{0, 0}})).front().value == 0.0);
    CHECK(std::abs(gradient_norms(record({{1, 0}, {0, 1}})).front().value - std::sqrt(0.5)) <= 1e-15);
}

TEST_CASE("energy metrics") {
    const Matrix W{{1, 2}, {3, 4}};
    auto e = energy_metrics(W, W);
    CHECK(e.retain == 1.0);
    CHECK(e.damage == 0.0);
    e = energy_metrics(2.0 * W, W);
    CHECK(e.retain == 4.0);
    CHECK(e.damage == 0.0);
    e = energy_metrics(Matrix{{4, -3}, {0, 0}}, Matrix{{3, 4}, {0, 0}});
    CHECK(e.retain == 0.0);
    CHECK(e.damage == 1.0);
    CHECK_THROWS_AS(energy_metrics(W, Matrix(2, 2)), ValidationError);
    CHECK_THROWS_AS(energy_metrics(W, Matrix(2, 3, 1.0)), ValidationError);
}

TEST_CASE("energy retain ignores components orthogonal to W_U") {
    std::mt19937_64 rng(52);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = test::uniform(rng, 1, 8);
        const std::size_t n = test::uniform(rng, 2, 8);
        const Matrix W_U = test::random_matrix(rng, m, n);
        const Matrix W_hat = test::random_matrix(rng, m, n);
        Matrix noise = test::random_matrix(rng, m, n);
        noise -= (frobenius_inner(noise, W_U) / frobenius_inner(W_U, W_U)) * W_U;
        const auto a = energy_metrics(W_hat, W_U);
        const auto b = energy_metrics(W_hat + noise, W_U);
        CHECK(std::abs(a.retain - b.retain) <= 1e-10 * std::max(1.0, a.retain));
        // Definitional oracle: ‖Proj‖²/‖W_U‖².
        const double c = frobenius_inner(W_hat, W_U) / std::pow(frobenius_norm(W_U), 2);
        const Matrix proj = c * W_U;
        CHECK(std::abs(a.retain - std::pow(frobenius_norm(proj) / frobenius_norm(W_U), 2)) <= 1e-10);
        CHECK(a.damage == std::max(0.0, 1.0 - a.retain));
    }
}

TEST_CASE("layer average") {
    CHECK(layer_average(std::vector<double>{1, 0}) == 0.5);
    CHECK(layer_average(std::vector<double>{0.3}) == 0.3);
    CHECK(layer_average(std::vector<double>{0.7, 0.7, 0.7}) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK_THROWS_AS(layer_average(std::vector<double>{}), ValidationError);
}

TEST_CASE("gradient and direction archives") {
    test::TempDir tmp;
    GradientRecord g{{"L0", "L1"}, {Matrix{{1, 2, 3}, {4, 5, 6}}, Matrix{{0.5, -1}, {2, 0}}}};
    write_archive(tmp / "g", to_archive(g));
    const auto back = gradient_record_from_archive(read_archive(tmp / "g"));
    CHECK(back.layer_names == g.layer_names);
    CHECK(back.samples == g.samples);
    CHECK(back.sample_count() == 2);

    SafetyDirection d{{"L0", "L1"}, {{1, 0, 0}, {0, 1}}, kDefaultEpsilon};
    write_archive(tmp / "s", to_archive(d));
    const auto dir = safety_direction_from_archive(read_archive(tmp / "s"));
    CHECK(dir.directions == d.directions);

    // Roles are checked.
    CHECK_THROWS_AS(gradient_record_from_archive(read_archive(tmp / "s")), ValidationError);
    CHECK_THROWS_AS(safety_direction_from_archive(read_archive(tmp / "g")), ValidationError);
}

TEST_CASE("safety direction from an adapter is vec(B·A)") {
    AdapterBundle bundle{AdapterRole::safety, {}};
    bundle.layers.emplace("L0", AdapterPair(Matrix{{1}, {2}}, Matrix{{3, 4, 5}}));
    const auto dir = safety_direction_from_archive(to_archive(bundle));
    REQUIRE(dir.directions.size() == 1);
    CHECK(dir.directions[0] == std::vector<double>{3, 4, 5, 6, 8, 10});
}

TEST_CASE("record validation") {
    GradientRecord uneven{{"a", "b"}, {Matrix(2, 3, 1.0), Matrix(3, 3, 1.0)}};
    CHECK_THROWS_AS(uneven.validate(), ValidationError);
    GradientRecord empty{{"a"}, {Matrix()}};
    CHECK_THROWS_AS(empty.validate(), ValidationError);
    GradientRecord mismatch{{"a", "b"}, {Matrix(1, 1, 1.0)}};
    CHECK_THROWS_AS(mismatch.validate(), ValidationError);
    SafetyDirection zero{{"a"}, {{0, 0}}, kDefaultEpsilon};
    CHECK_THROWS_AS(zero.validate(), ValidationError);
}
