#include "doctest.h"

#include <algorithm>
#include <random>

#include "patchfill/embedding/embedding.hpp"
#include "patchfill/embedding/patches.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/ops.hpp"

using namespace patchfill;
using namespace patchfill::embedding;
using numerics::ParameterStore;
using numerics::Tape;

namespace {

data::SeriesWindow window_of(std::vector<double> values, data::Mask mask = {}) {
    data::SeriesWindow w;
    if (mask.empty()) mask.assign(values.size(), 1);
    w.values = std::move(values);
    w.mask = std::move(mask);
    return w;
}

// Reference statistics: selection-sort median, pairwise slope formula.
Stats brute_stats(const std::vector<double>& v, const data::Mask& m) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (m[i]) pts.emplace_back(static_cast<double>(i), v[i]);
    if (pts.empty()) return {0, 0, 0, 0};
    std::vector<double> ys;
    for (auto& p : pts) ys.push_back(p.second);
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = i + 1; j < ys.size(); ++j)
            if (ys[j] < ys[i]) std::swap(ys[i], ys[j]);
    const std::size_t n = ys.size();
    const double med = n % 2 ? ys[n / 2] : (ys[n / 2 - 1] + ys[n / 2]) / 2.0;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            num += (pts[j].first - pts[i].first) * (pts[j].second - pts[i].second);
            den += (pts[j].first - pts[i].first) * (pts[j].first - pts[i].first);
        }
    }
    return {ys.front(), med, ys.back(), den > 0 ? num / den : 0.0};
}

// Multiples of 1/256 in [-4, 4]: sums and products below stay exact in 64-bit.
double dyadic(std::mt19937_64& rng) {
    return static_cast<double>(static_cast<int>(rng() % 2049) - 1024) / 256.0;
}

void fill_dyadic(ParameterStore<double>& store, std::mt19937_64& rng) {
    for (auto* p : store.all())
        for (auto& v : p->value.values()) v = dyadic(rng);
}

EmbeddingConfig small_config() {
    EmbeddingConfig c;
    c.window_length = 16;
    c.patch_length = 4;
    c.width = 6;
    return c;
}

numerics::Tensor<double> embed(ParameterStore<double>& store, const EmbeddingConfig& c,
                               const std::vector<data::SeriesWindow>& windows) {
    Tape<double> tape;
    numerics::Binder<double> bind(tape, store);
    auto batch = make_batch<double>(windows, c);
    return embed_input(bind, batch).value();
}

} // namespace

TEST_CASE("patchify examples") {
    auto w = window_of(std::vector<double>(96, 1.0));
    auto ps = patchify(w, 16);
    CHECK(ps.count == 6);
    CHECK(std::all_of(ps.ratios.begin(), ps.ratios.end(), [](double r) { return r == 0.0; }));
    auto half = patchify(window_of({1, 2, 3, 4}, {1, 1, 0, 0}), 4);
    CHECK(half.ratios == std::vector<double>{0.5});
    auto split = patchify(window_of({1, 2, 3, 4, 5, 6}, {1, 0, 1, 1, 1, 1}), 2);
    CHECK(split.patch(1)[0] == 3.0);
    CHECK(split.ratios == std::vector<double>{0.5, 0.0, 0.0});
    CHECK_THROWS_AS(patchify(w, 7), ConfigError);
}

TEST_CASE("patch_stats examples") {
    data::Mask all4(4, 1);
    CHECK(patch_stats(std::vector<double>{1, 2, 3, 4}, all4) == Stats{1, 2.5, 4, 1.0});
    CHECK(patch_stats(std::vector<double>{3, 3, 3, 3}, all4) == Stats{3, 3, 3, 0});
    CHECK(patch_stats(std::vector<double>{3, 1, 4, 1}, data::Mask(4, 0)) == Stats{0, 0, 0, 0});
    CHECK(patch_stats(std::vector<double>{9, 5, 7, 8}, data::Mask{0, 1, 0, 0}) == Stats{5, 5, 5, 0});
    CHECK(patch_stats(std::vector<double>{1, 9, 2, 7}, data::Mask{1, 0, 1, 1}) == Stats{1, 2, 7, 25.0 / 14.0});
}

TEST_CASE("series_stats examples") {
    std::vector<double> ramp(96);
    for (std::size_t i = 0; i < 96; ++i) ramp[i] = static_cast<double>(i);
    CHECK(series_stats(ramp, data::Mask(96, 1)) == Stats{0, 47.5, 95, 1.0});
    data::Mask ends(96, 0);
    ends[0] = ends[95] = 1;
    CHECK(series_stats(ramp, ends)[3] == 1.0);
    CHECK(series_stats(std::vector<double>(96, -2.0), data::Mask(96, 1)) == Stats{-2, -2, -2, 0});
}

TEST_CASE("patch_stats matches brute force") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t P = 1 + rng() % 32;
        std::vector<double> v(P);
        data::Mask m(P);
        for (std::size_t i = 0; i < P; ++i) {
            v[i] = dyadic(rng);
            m[i] = rng() % 3 != 0;
        }
        CHECK(patch_stats(v, m) == brute_stats(v, m));
    }
}

TEST_CASE("embedding sequence layout") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(1);
    add_parameters(store, c, rng);
    std::mt19937_64 gen(2);
    std::vector<data::SeriesWindow> ws;
    for (int b = 0; b < 3; ++b) {
        std::vector<double> v(16);
        for (auto& x : v) x = dyadic(gen);
        data::Mask m(16, 1);
        m[static_cast<std::size_t>(b) * 5] = 0;
        v[static_cast<std::size_t>(b) * 5] = 0;
        ws.push_back(window_of(v, m));
    }
    auto e = embed(store, c, ws);
    const std::size_t S = c.patch_count() + 2, D = c.width;
    REQUIRE(e.rows() == 3 * S);
    REQUIRE(e.cols() == D);
    const auto& k = store.get("embed.domain").value;
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t d = 0; d < D; ++d) CHECK(e.at(b * S, d) == k[d]);
        // Global token equals the stats projection of the series statistics.
        const Stats g = series_stats(ws[b].values, ws[b].mask);
        for (std::size_t d = 0; d < D; ++d) {
            double want = store.get("embed.stats.b").value[d];
            for (std::size_t s = 0; s < 4; ++s) want += g[s] * store.get("embed.stats.w").value.at(s, d);
            CHECK(e.at(b * S + 1, d) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("missing embedding is linear in the ratio") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(3);
    add_parameters(store, c, rng);
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 50; ++trial) {
        fill_dyadic(store, gen);
        numerics::Tensor<double> x({2, 4}), s({2, 4});
        for (auto& v : x.values()) v = dyadic(gen);
        for (auto& v : s.values()) v = dyadic(gen);
        Tape<double> tape;
        numerics::Binder<double> bind(tape, store);
        auto t0 = patch_tokens(bind, bind.constant(x), bind.constant(s), bind.constant(numerics::Tensor<double>({2, 1})));
        auto t1 = patch_tokens(bind, bind.constant(x), bind.constant(s),
                               bind.constant(numerics::Tensor<double>({2, 1}, 1.0)));
        const auto& z = store.get("embed.missing").value;
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t d = 0; d < c.width; ++d) CHECK(t1.value().at(r, d) - t0.value().at(r, d) == z[d]);
    }
}

TEST_CASE("fully observed windows carry no missing embedding") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(5);
    add_parameters(store, c, rng);
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = std::sin(static_cast<double>(i));
    std::vector<data::SeriesWindow> ws{window_of(v)};
    auto before = embed(store, c, ws);
    for (auto& z : store.get("embed.missing").value.values()) z += 3.0;
    CHECK(embed(store, c, ws) == before);

    // And the gradient reaching z_m is exactly zero.
    Tape<double> tape;
    numerics::Binder<double> bind(tape, store);
    auto batch = make_batch<double>(ws, c);
    tape.backward(numerics::sum(numerics::mul(embed_input(bind, batch), embed_input(bind, batch))));
    for (double g : store.get("embed.missing").grad.values()) CHECK(g == 0.0);
    CHECK(store.get("embed.patch.w").grad.values()[0] != 0.0);
}

TEST_CASE("fully missing patch with zero z_m and zero stats") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(6);
    add_parameters(store, c, rng);
    store.get("embed.missing").value.fill(0.0);
    for (auto& b : store.get("embed.patch.b").value.values()) b = 0.25;
    for (auto& b : store.get("embed.stats.b").value.values()) b = -0.5;
    std::vector<double> v(16, 0.7);
    data::Mask m(16, 1);
    for (std::size_t i = 4; i < 8; ++i) {
        m[i] = 0;
        v[i] = 0;
    }
    auto e = embed(store, c, {window_of(v, m)});
    for (std::size_t d = 0; d < c.width; ++d) CHECK(e.at(3, d) == -0.25);
}

TEST_CASE("a single extra missing point changes only its patch token") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(7);
    add_parameters(store, c, rng);
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = std::cos(0.3 * static_cast<double>(i));
    auto a = window_of(v);
    auto b = a;
    b.mask[13] = 0;
    b.values[13] = 0;
    auto ea = embed(store, c, {a});
    auto eb = embed(store, c, {b});
    const std::size_t D = c.width;
    auto row_equal = [&](std::size_t r) {
        for (std::size_t d = 0; d < D; ++d)
            if (ea.at(r, d) != eb.at(r, d)) return false;
        return true;
    };
    CHECK(row_equal(0));
    CHECK(row_equal(2));
    CHECK(row_equal(3));
    CHECK(row_equal(4));
    CHECK_FALSE(row_equal(5));
}

TEST_CASE("per-domain embedding table") {
    auto c = small_config();
    c.domains = {"solar", "traffic"};
    ParameterStore<double> store;
    Rng rng(9);
    add_parameters(store, c, rng);
    CHECK(store.get("embed.domain").value.rows() == 2);
    auto w = window_of(std::vector<double>(16, 0.1));
    w.domain = "traffic";
    auto e = embed(store, c, {w});
    for (std::size_t d = 0; d < c.width; ++d) CHECK(e.at(0, d) == store.get("embed.domain").value.at(1, d));
    w.domain = "weather";
    CHECK_THROWS_AS(embed(store, c, {w}), LookupError);
    w.domain = "";
    CHECK_THROWS_AS(embed(store, c, {w}), LookupError);
}

TEST_CASE("embedding rejects mismatched windows") {
    auto c = small_config();
    ParameterStore<double> store;
    Rng rng(10);
    add_parameters(store, c, rng);
    CHECK_THROWS_AS(embed(store, c, {window_of(std::vector<double>(12, 0.0))}), DimensionError);
    c.patch_length = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
