#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "patchfill/adaptation/forecast.hpp"
#include "patchfill/adaptation/intervar.hpp"
#include "patchfill/adaptation/prefix.hpp"
#include "patchfill/data/synthetic.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/grad_check.hpp"
#include "patchfill/numerics/ops.hpp"
#include "patchfill/training/losses.hpp"
#include "test_util.hpp"

using namespace patchfill;
using namespace patchfill::adaptation;
using numerics::Tape;
using numerics::Tensor;

namespace {

backbone::BackboneConfig tiny_config() {
    backbone::BackboneConfig c;
    c.layers = 2;
    c.heads = 2;
    c.width = 8;
    c.patch_length = 4;
    c.window_length = 12;
    c.max_tokens = 8;
    c.dropout = 0.0;
    return c;
}

data::MultivariateSeries sinusoids(std::size_t variables, std::size_t steps, std::uint64_t seed) {
    data::SinusoidSpec spec;
    spec.variables = variables;
    spec.steps = steps;
    spec.min_period = 6;
    spec.max_period = 24;
    spec.seed = seed;
    return data::sinusoid_series(spec);
}

// Random tensor on a 1/256 grid so sums and power-of-two scalings are exact.
template <std::floating_point T>
Tensor<T> dyadic(numerics::Shape shape, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(-512, 512);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(d(rng)) / T{256};
    return t;
}

template <std::floating_point T>
Tensor<T> stack_prefix(const backbone::PrefixKV<T>& kv) {
    std::vector<T> out;
    for (const auto& l : kv) {
        for (auto v : l.key.value().values()) out.push_back(v);
        for (auto v : l.value.value().values()) out.push_back(v);
    }
    const std::size_t n = out.size();
    return Tensor<T>({n}, std::move(out));
}

} // namespace

TEST_CASE("combine_prefix examples") {
    Tape<double> tape;
    std::mt19937_64 rng(3);
    const auto p = testing::random_tensor<double>({4, 5}, rng);
    auto kv = combine_prefix(tape.constant(p), tape.constant(Tensor<double>({4, 5})), 0.01);
    REQUIRE(kv.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(kv[l].key.value()[c] == p.at(2 * l, c));
            CHECK(kv[l].value.value()[c] == p.at(2 * l + 1, c));
        }
    }

    Tape<float> ft;
    auto ones = combine_prefix(ft.constant(Tensor<float>({6, 3})), ft.constant(Tensor<float>({6, 3}, 100.0f)), 0.01);
    for (const auto& l : ones) {
        for (float v : l.key.value().values()) CHECK(v == 1.0f);
        for (float v : l.value.value().values()) CHECK(v == 1.0f);
    }
    auto dones = combine_prefix(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 3}, 100.0)), 0.01);
    for (double v : dones[0].key.value().values()) CHECK(v == 1.0);

    CHECK_THROWS_AS(combine_prefix(tape.constant(Tensor<double>({4, 5})), tape.constant(Tensor<double>({4, 4})), 0.01),
                    ConfigError);
    CHECK_THROWS_AS(combine_prefix(tape.constant(Tensor<double>({3, 5})), tape.constant(Tensor<double>({3, 5})), 0.01),
                    ConfigError);
}

TEST_CASE("combine_prefix superposition") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tape<double> tape;
        const auto p1 = dyadic<double>({6, 7}, rng), p2 = dyadic<double>({6, 7}, rng);
        const auto k1 = dyadic<double>({6, 7}, rng), k2 = dyadic<double>({6, 7}, rng);
        Tensor<double> ps({6, 7}), ks({6, 7});
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ps[i] = p1[i] + p2[i];
            ks[i] = k1[i] + k2[i];
        }
        // A power-of-two beta keeps every product exact on the grid.
        const double beta = 1.0 / 128.0;
        const auto a = stack_prefix(combine_prefix(tape.constant(p1), tape.constant(k1), beta));
        const auto b = stack_prefix(combine_prefix(tape.constant(p2), tape.constant(k2), beta));
        const auto s = stack_prefix(combine_prefix(tape.constant(ps), tape.constant(ks), beta));
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == a[i] + b[i]);

        // With beta = 0.01 the identity holds to rounding.
        const auto a2 = stack_prefix(combine_prefix(tape.constant(p1), tape.constant(k1), 0.01));
        const auto b2 = stack_prefix(combine_prefix(tape.constant(p2), tape.constant(k2), 0.01));
        const auto s2 = stack_prefix(combine_prefix(tape.constant(ps), tape.constant(ks), 0.01));
        for (std::size_t i = 0; i < s2.size(); ++i) CHECK(std::abs(s2[i] - (a2[i] + b2[i])) < 1e-15);
    }
}

TEST_CASE("domain prefix: shared rows match per-sequence rows") {
    auto c = tiny_config();
    c.domains = {"a", "b"};
    auto model = backbone::make_model<double>(c, 5);
    auto bundle = make_prefix_bundle(model, PrefixConfig{}, 9);
    const auto fn = domain_prefix_fn<double>(c, 0.01);

    std::vector<data::SeriesWindow> mixed(3);
    for (std::size_t i = 0; i < 3; ++i) {
        mixed[i].values.assign(12, 0.0);
        mixed[i].mask.assign(12, 1);
        mixed[i].domain = i == 1 ? "b" : "a";
    }
    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params, &bundle.params);
    const auto per_seq = fn(bind, std::span<const data::SeriesWindow>(mixed));
    REQUIRE(per_seq.size() == 2);
    CHECK(per_seq[0].key.value().rows() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto shared = fn(bind, std::span<const data::SeriesWindow>(&mixed[i], 1));
        CHECK(shared[0].key.value().rows() == 1);
        for (std::size_t l = 0; l < 2; ++l) {
            for (std::size_t d = 0; d < 8; ++d) {
                CHECK(per_seq[l].key.value().at(i, d) == shared[l].key.value()[d]);
                CHECK(per_seq[l].value.value().at(i, d) == shared[l].value.value()[d]);
            }
        }
    }
}

TEST_CASE("prefix fine-tuning updates only the bundle") {
    const auto c = tiny_config();
    auto model = backbone::make_model<float>(c, 1);
    const auto series = sinusoids(6, 72, 4);
    const auto train = data::slice_windows(series, 12, 6, {0, 1, 2, 3});
    const auto val = data::slice_windows(series, 12, 12, {4, 5});
    auto bundle = make_prefix_bundle(model, PrefixConfig{}, 2);
    std::vector<Tensor<float>> before_bundle;
    for (auto* p : bundle.params.all()) before_bundle.push_back(p->value);
    const auto base_bytes = backbone::to_checkpoint(model).serialize();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 3;
    tc.adam.lr = 1e-3;
    tc.val_rates = {0.3, 0.6};
    const auto result = finetune_prefix(model, bundle, train, val, tc);
    CHECK(result.epochs >= 1);
    CHECK(backbone::to_checkpoint(model).serialize() == base_bytes);
    bool changed = false;
    auto params = bundle.params.all();
    for (std::size_t i = 0; i < params.size(); ++i) changed = changed || !(params[i]->value == before_bundle[i]);
    CHECK(changed);

    SUBCASE("frozen parameters cannot be stepped") {
        model.params.set_frozen(true);
        std::vector<numerics::Parameter<float>*> all = model.params.all();
        training::Adam<float> opt(all, tc.adam);
        CHECK_THROWS_AS(opt.step(), InvariantViolation);
    }
    SUBCASE("guard notices a modified base") {
        FrozenGuard<float> guard(model.params);
        model.params.get("head.b").value[0] += 1.0f;
        CHECK_THROWS_AS(guard.verify(), InvariantViolation);
    }
}

TEST_CASE("prefix checkpoint size is independent of the corpus") {
    const auto c = tiny_config();
    training::TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 1;
    tc.val_rates = {0.5};
    std::vector<std::size_t> sizes;
    for (std::size_t steps : {48u, 240u}) {
        auto model = backbone::make_model<float>(c, 1);
        const auto series = sinusoids(4, steps, 8);
        auto bundle = make_prefix_bundle(model, PrefixConfig{}, 2);
        finetune_prefix(model, bundle, data::slice_windows(series, 12, 12, {0, 1, 2}),
                        data::slice_windows(series, 12, 12, {3}), tc);
        const auto bytes = to_checkpoint(bundle).serialize();
        sizes.push_back(bytes.size());

        const auto loaded = prefix_from_checkpoint<float>(numerics::Checkpoint::deserialize(bytes), c);
        CHECK(to_checkpoint(loaded).serialize() == bytes);
        auto other = c;
        other.width = 16;
        CHECK_THROWS_AS(prefix_from_checkpoint<float>(numerics::Checkpoint::deserialize(bytes), other), ConfigError);
        CHECK_THROWS_AS(prefix_from_checkpoint<float>(backbone::to_checkpoint(model), c), FormatError);
    }
    CHECK(sizes[0] == sizes[1]);
}

TEST_CASE("trainable domain copy shadows the base table") {
    const auto c = tiny_config();
    auto model = backbone::make_model<float>(c, 1);
    PrefixConfig pc;
    pc.train_domain = true;
    auto bundle = make_prefix_bundle(model, pc, 2);
    CHECK(bundle.params.contains("embed.domain"));
    const auto series = sinusoids(4, 48, 8);
    const auto base_bytes = backbone::to_checkpoint(model).serialize();
    training::TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 1;
    tc.adam.lr = 1e-2;
    tc.val_rates = {0.5};
    finetune_prefix(model, bundle, data::slice_windows(series, 12, 12, {0, 1, 2}),
                    data::slice_windows(series, 12, 12, {3}), tc);
    CHECK(backbone::to_checkpoint(model).serialize() == base_bytes);
    CHECK(!(bundle.params.get("embed.domain").value == model.params.get("embed.domain").value));
}

TEST_CASE("inter-variable prefix shapes and single variable") {
    auto c = tiny_config();
    c.width = 16;
    InterVarConfig ic;
    auto net = make_intervar<double>(c, ic, 3);
    auto model = backbone::make_model<double>(c, 1);
    std::mt19937_64 rng(4);
    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params, &net.params);
    const auto kv = intervar_prefix(bind, c, ic, tape.constant(testing::random_tensor<double>({1, 12}, rng)));
    REQUIRE(kv.size() == 2);
    CHECK(kv[0].key.shape() == numerics::Shape{1, 16});
    CHECK(kv[1].value.shape() == numerics::Shape{1, 16});
    for (const auto& l : kv) {
        CHECK(l.key.value().all_finite());
        CHECK(l.value.value().all_finite());
    }
    CHECK_THROWS_AS(intervar_prefix(bind, c, ic, tape.constant(Tensor<double>({2, 11}))), DimensionError);
    InterVarConfig bad;
    bad.light_width = 6;
    bad.heads = 4;
    CHECK_THROWS_AS(make_intervar<double>(c, bad, 0), ConfigError);
}

TEST_CASE("inter-variable prefix is permutation equivariant") {
    auto c = tiny_config();
    c.width = 16;
    for (std::size_t heads : {1u, 2u}) {
        InterVarConfig ic;
        ic.heads = heads;
        auto net = make_intervar<double>(c, ic, 7);
        auto model = backbone::make_model<double>(c, 1);
        std::mt19937_64 rng(5 + heads);
        const std::size_t V = 5;
        const auto x = testing::random_tensor<double>({V, 12}, rng, -2, 2);
        std::vector<std::size_t> perm(V);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (int trial = 0; trial < 10; ++trial) {
            std::shuffle(perm.begin(), perm.end(), rng);
            Tensor<double> xp({V, 12});
            for (std::size_t r = 0; r < V; ++r)
                for (std::size_t t = 0; t < 12; ++t) xp.at(r, t) = x.at(perm[r], t);
            Tape<double> tape;
            numerics::Binder<double> bind(tape, model.params, &net.params);
            const auto a = intervar_prefix(bind, c, ic, tape.constant(x));
            const auto b = intervar_prefix(bind, c, ic, tape.constant(xp));
            for (std::size_t l = 0; l < c.layers; ++l) {
                for (std::size_t r = 0; r < V; ++r) {
                    for (std::size_t d = 0; d < 16; ++d) {
                        CHECK(std::abs(b[l].key.value().at(r, d) - a[l].key.value().at(perm[r], d)) < 1e-12);
                        CHECK(std::abs(b[l].value.value().at(r, d) - a[l].value.value().at(perm[r], d)) < 1e-12);
                    }
                }
            }
        }
    }
}

TEST_CASE("inter-variable prefix gradients") {
    auto c = tiny_config();
    c.width = 16;
    InterVarConfig ic;
    ic.light_width = 8;
    ic.heads = 2;
    auto net = make_intervar<double>(c, ic, 13);
    auto model = backbone::make_model<double>(c, 1);
    model.params.set_frozen(true);
    std::mt19937_64 rng(17);
    const auto x = testing::random_tensor<double>({3, 12}, rng, -2, 2);
    std::vector<Tensor<double>> weights;
    for (std::size_t i = 0; i < 2 * c.layers; ++i) weights.push_back(testing::random_tensor<double>({3, 16}, rng));
    numerics::LossFn<double> f = [&](Tape<double>& tape) {
        numerics::Binder<double> bind(tape, model.params, &net.params);
        const auto kv = intervar_prefix(bind, c, ic, tape.constant(x));
        std::vector<numerics::Var<double>> terms;
        for (std::size_t l = 0; l < kv.size(); ++l) {
            terms.push_back(numerics::sum(numerics::mul(kv[l].key, tape.constant(weights[2 * l]))));
            terms.push_back(numerics::sum(numerics::mul(kv[l].value, tape.constant(weights[2 * l + 1]))));
        }
        return numerics::sum(numerics::concat(std::span<const numerics::Var<double>>(terms), 0));
    };
    std::vector<numerics::Parameter<double>*> params;
    for (auto* p : net.params.all())
        if (p->name.find("attn.qkv.b") == std::string::npos) params.push_back(p);
    const auto r = numerics::grad_check<double>(f, params, 1e-4);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-3);

    // Key biases shift every score of a row equally, so softmax cancels them
    // and their gradient is exactly zero; check those entries absolutely.
    {
        Tape<double> tape;
        net.params.zero_grad();
        tape.backward(f(tape));
    }
    const std::size_t d = 8;
    for (std::size_t l = 0; l < c.layers; ++l) {
        auto& b = net.params.get("intervar.layer" + std::to_string(l) + ".attn.qkv.b");
        const auto analytic = b.grad;
        for (std::size_t i = 0; i < 3 * d; ++i) {
            const double saved = b.value[i];
            b.value[i] = saved + 1e-4;
            Tape<double> t1;
            const double up = f(t1).value()[0];
            b.value[i] = saved - 1e-4;
            Tape<double> t2;
            const double down = f(t2).value()[0];
            b.value[i] = saved;
            const double numeric = (up - down) / 2e-4;
            if (i >= d && i < 2 * d) {
                CHECK(std::abs(analytic[i]) < 1e-12);
                CHECK(std::abs(numeric) < 1e-8);
            } else {
                CHECK(std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8}) <
                      1e-3);
            }
        }
    }
}

TEST_CASE("inter-variable blocks: batch of blocks equals blocks alone") {
    auto c = tiny_config();
    c.width = 16;
    const auto series = sinusoids(3, 36, 2);
    const auto blocks = block_windows(series, 12, 12, {0, 1, 2});
    REQUIRE(blocks.size() == 9);
    CHECK(blocks[0].variable == 0);
    CHECK(blocks[2].variable == 2);
    CHECK(blocks[3].start == 12);
    InterVarConfig ic;
    auto net = make_intervar<double>(c, ic, 3);
    auto model = backbone::make_model<double>(c, 1);
    const auto fn = intervar_prefix_fn<double>(c, ic, 3);
    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params, &net.params);
    const auto all = fn(bind, std::span<const data::SeriesWindow>(blocks).subspan(0, 6));
    const auto second = fn(bind, std::span<const data::SeriesWindow>(blocks).subspan(3, 3));
    CHECK(all[0].key.value().rows() == 6);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t d = 0; d < 16; ++d) CHECK(all[1].value.value().at(3 + r, d) == second[1].value.value().at(r, d));
    CHECK_THROWS_AS(fn(bind, std::span<const data::SeriesWindow>(blocks).subspan(0, 4)), ConfigError);
}

TEST_CASE("inter-variable fine-tuning keeps the base") {
    auto c = tiny_config();
    c.width = 16;
    auto model = backbone::make_model<float>(c, 1);
    const auto series = sinusoids(3, 96, 6);
    const auto train = block_windows(series, 12, 6, {0, 1, 2});
    auto val = block_windows(series, 12, 24, {0, 1, 2});
    auto net = make_intervar<float>(c, InterVarConfig{}, 4);
    const auto base_bytes = backbone::to_checkpoint(model).serialize();
    training::TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 2;
    tc.val_rates = {0.5};
    const auto r = finetune_intervar(model, net, 3, train, val, tc);
    CHECK(r.epochs == 2);
    CHECK(backbone::to_checkpoint(model).serialize() == base_bytes);
    const auto bytes = to_checkpoint(net).serialize();
    CHECK(to_checkpoint(intervar_from_checkpoint<float>(numerics::Checkpoint::deserialize(bytes), c)).serialize() ==
          bytes);
    val.pop_back();
    CHECK_THROWS_AS(finetune_intervar(model, net, 3, train, val, tc), ConfigError);
}

TEST_CASE("forecaster shapes, limits and gradients") {
    auto c = tiny_config();
    auto model = backbone::make_model<double>(c, 1);
    ForecastConfig fc_cfg;
    fc_cfg.horizon_patches = 4;
    CHECK_THROWS_AS(make_forecaster(model, fc_cfg, 0), ConfigError);
    fc_cfg.horizon_patches = 2;
    auto fc = make_forecaster(model, fc_cfg, 2);
    CHECK(fc.horizon() == 8);
    CHECK(fc.params.get("pos").value == model.params.get("pos").value);

    const auto series = sinusoids(2, 40, 3);
    const auto samples = forecast_samples(series, 12, 8, 10, {0, 1});
    REQUIRE(samples.size() == 6);
    CHECK(samples[1].history.start == 10);
    CHECK(samples[1].future[0] == series.value(22, 0));
    std::vector<data::SeriesWindow> hist;
    for (const auto& s : samples) hist.push_back(s.history);
    const auto out = forecast(model, fc, std::span<const data::SeriesWindow>(hist), 3);
    REQUIRE(out.size() == 6);
    CHECK(out[0].size() == 8);

    model.params.set_frozen(true);
    std::vector<data::SeriesWindow> inputs;
    for (const auto& h : hist) inputs.push_back(data::revin_normalize(h).first);
    std::mt19937_64 rng(1);
    const auto target = testing::random_tensor<double>({6, 8}, rng);
    numerics::LossFn<double> f = [&](Tape<double>& tape) {
        numerics::Binder<double> bind(tape, model.params, &fc.params);
        const auto batch = embedding::make_batch<double>(std::span<const data::SeriesWindow>(inputs), c.embedding());
        const auto kv = domain_prefix_fn<double>(c, fc_cfg.beta)(bind, std::span<const data::SeriesWindow>(inputs));
        return training::mse_loss(forecast_forward(bind, fc, batch, &kv), target);
    };
    const auto params = fc.params.all();
    const auto r = numerics::grad_check<double>(f, params, 1e-4);
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("carry_forward baseline") {
    data::SeriesWindow h;
    h.values = {1, 2, 3, 4};
    h.mask = {1, 1, 1, 0};
    CHECK(carry_forward(h, 3) == std::vector<double>{3, 3, 3});
    h.mask = {0, 0, 0, 0};
    CHECK(carry_forward(h, 2) == std::vector<double>{0, 0});
}

TEST_CASE("forecast fine-tuning beats carry-forward on held-out variables") {
    backbone::BackboneConfig c;
    c.layers = 2;
    c.heads = 2;
    c.width = 16;
    c.patch_length = 4;
    c.window_length = 24;
    c.max_tokens = 12;
    c.dropout = 0.0;
    auto model = backbone::make_model<float>(c, 1);
    const auto series = sinusoids(12, 200, 21);
    const auto train = forecast_samples(series, 24, 8, 4, {0, 1, 2, 3, 4, 5, 6, 7});
    const auto val = forecast_samples(series, 24, 8, 16, {8, 9});
    const auto test = forecast_samples(series, 24, 8, 16, {10, 11});
    ForecastConfig fcfg;
    fcfg.horizon_patches = 2;
    auto fc = make_forecaster(model, fcfg, 3);
    const auto base_bytes = backbone::to_checkpoint(model).serialize();
    training::TrainConfig tc;
    tc.batch_size = 16;
    tc.epochs = 30;
    tc.patience = 5;
    tc.adam.lr = 3e-3;
    finetune_forecaster(model, fc, train, val, tc);
    CHECK(backbone::to_checkpoint(model).serialize() == base_bytes);
    const double model_mse = forecast_mse(model, fc, std::span<const ForecastSample>(test));
    const double last_mse = carry_forward_mse(std::span<const ForecastSample>(test));
    MESSAGE("forecast mse " << model_mse << " carry-forward mse " << last_mse);
    CHECK(model_mse < last_mse);

    const auto bytes = to_checkpoint(fc).serialize();
    auto loaded = forecaster_from_checkpoint<float>(numerics::Checkpoint::deserialize(bytes), model);
    CHECK(forecast_mse(model, loaded, std::span<const ForecastSample>(test)) == model_mse);
}
