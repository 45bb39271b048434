#include "doctest.h"

#include <cmath>
#include <random>

#include "patchfill/backbone/model.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/grad_check.hpp"
#include "patchfill/numerics/ops.hpp"
#include "test_util.hpp"

using namespace patchfill;
using namespace patchfill::backbone;
using numerics::Tape;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.layers = 2;
    c.heads = 2;
    c.width = 8;
    c.patch_length = 4;
    c.window_length = 12;
    c.max_tokens = 8;
    c.dropout = 0.0;
    return c;
}

std::vector<data::SeriesWindow> random_windows(std::size_t count, std::size_t L, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> val(-1.5, 1.5);
    std::vector<data::SeriesWindow> out;
    for (std::size_t b = 0; b < count; ++b) {
        data::SeriesWindow w;
        for (std::size_t i = 0; i < L; ++i) {
            const bool keep = rng() % 4 != 0;
            w.values.push_back(keep ? val(rng) : 0.0);
            w.mask.push_back(keep ? 1 : 0);
        }
        out.push_back(w);
    }
    return out;
}

// Scalar reference for one pre-norm block, one head, over a handful of tokens.
using Mat = std::vector<std::vector<double>>;

Mat param_matrix(const numerics::Tensor<double>& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

std::vector<double> affine(const std::vector<double>& x, const Mat& w, const numerics::Tensor<double>& b) {
    std::vector<double> y(w[0].size());
    for (std::size_t j = 0; j < y.size(); ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i][j];
        y[j] = s;
    }
    return y;
}

std::vector<double> norm(const std::vector<double>& x, const numerics::Tensor<double>& g,
                         const numerics::Tensor<double>& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return y;
}

double gelu_ref(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

} // namespace

TEST_CASE("single block matches a scalar trace") {
    BackboneConfig c;
    c.layers = 1;
    c.heads = 1;
    c.width = 2;
    c.ff_width = 2;
    c.patch_length = 1;
    c.window_length = 2;
    c.max_tokens = 4;
    c.dropout = 0;
    auto model = make_model<double>(c, 1);
    // Hand-set weights on a fixed pattern.
    std::size_t k = 0;
    for (auto* p : model.params.all())
        for (auto& v : p->value.values()) v = 0.1 * static_cast<double>(static_cast<int>(k++ % 9) - 4);
    auto P = [&](const char* n) -> const numerics::Tensor<double>& { return model.params.get(n).value; };

    const Mat tokens = {{0.5, -1.0}, {2.0, 0.25}};
    // Reference trace.
    Mat x = tokens;
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t d = 0; d < 2; ++d) x[t][d] += P("pos").at(t, d);
    Mat q(2), kk(2), vv(2);
    for (std::size_t t = 0; t < 2; ++t) {
        auto qkv = affine(norm(x[t], P("layer0.ln1.g"), P("layer0.ln1.b")), param_matrix(P("layer0.attn.qkv.w")),
                          P("layer0.attn.qkv.b"));
        q[t] = {qkv[0], qkv[1]};
        kk[t] = {qkv[2], qkv[3]};
        vv[t] = {qkv[4], qkv[5]};
    }
    Mat expected(2);
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<double> scores;
        for (std::size_t s = 0; s <= t; ++s) scores.push_back((q[t][0] * kk[s][0] + q[t][1] * kk[s][1]) / std::sqrt(2.0));
        double mx = *std::max_element(scores.begin(), scores.end()), z = 0;
        for (auto& sc : scores) z += (sc = std::exp(sc - mx));
        std::vector<double> att(2, 0.0);
        for (std::size_t s = 0; s <= t; ++s)
            for (std::size_t d = 0; d < 2; ++d) att[d] += scores[s] / z * vv[s][d];
        auto a = affine(att, param_matrix(P("layer0.attn.out.w")), P("layer0.attn.out.b"));
        std::vector<double> h = {x[t][0] + a[0], x[t][1] + a[1]};
        auto f = affine(norm(h, P("layer0.ln2.g"), P("layer0.ln2.b")), param_matrix(P("layer0.ff.fc1.w")),
                        P("layer0.ff.fc1.b"));
        for (auto& v : f) v = gelu_ref(v);
        f = affine(f, param_matrix(P("layer0.ff.fc2.w")), P("layer0.ff.fc2.b"));
        expected[t] = norm({h[0] + f[0], h[1] + f[1]}, P("ln_f.g"), P("ln_f.b"));
    }

    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params);
    auto in = tape.constant(numerics::Tensor<double>::matrix(2, 2, {0.5, -1.0, 2.0, 0.25}));
    auto out = forward(bind, c, in, 1, 2).final.value();
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t d = 0; d < 2; ++d) CHECK(std::abs(out.at(t, d) - expected[t][d]) < 1e-6);
}

TEST_CASE("later tokens never influence earlier hidden states") {
    auto c = tiny_config();
    auto model = make_model<double>(c, 2);
    std::mt19937_64 rng(3);
    const std::size_t B = 2, S = c.seq_length(), D = c.width;
    auto tokens = patchfill::testing::random_tensor<double>({B * S, D}, rng);
    numerics::Tensor<double> pk = patchfill::testing::random_tensor<double>({1, D}, rng);
    for (bool with_prefix : {false, true}) {
        for (std::size_t j = 1; j < S; ++j) {
            auto run = [&](const numerics::Tensor<double>& input) {
                Tape<double> tape;
                numerics::Binder<double> bind(tape, model.params);
                PrefixKV<double> prefix;
                for (std::size_t l = 0; l < c.layers; ++l) prefix.push_back({tape.constant(pk), tape.constant(pk)});
                auto h = forward(bind, c, tape.constant(input), B, S, with_prefix ? &prefix : nullptr);
                std::vector<numerics::Tensor<double>> states;
                for (auto& v : h.layers) states.push_back(v.value());
                states.push_back(h.final.value());
                return states;
            };
            auto perturbed = tokens;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t d = 0; d < D; ++d) perturbed.at(b * S + j, d) += 0.7 + 0.1 * static_cast<double>(d);
            auto base = run(tokens), moved = run(perturbed);
            for (std::size_t s = 0; s < base.size(); ++s) {
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t i = 0; i < j; ++i)
                        for (std::size_t d = 0; d < D; ++d) CHECK(base[s].at(b * S + i, d) == moved[s].at(b * S + i, d));
                    bool changed = false;
                    for (std::size_t d = 0; d < D; ++d) changed = changed || base[s].at(b * S + j, d) != moved[s].at(b * S + j, d);
                    CHECK(changed);
                }
            }
        }
    }
}

TEST_CASE("a zero prefix still shifts attention mass") {
    auto c = tiny_config();
    auto model = make_model<double>(c, 4);
    std::mt19937_64 rng(5);
    auto windows = random_windows(3, c.window_length, rng);
    auto batch = embedding::make_batch<double>(windows, c.embedding());
    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params);
    PrefixKV<double> zero;
    for (std::size_t l = 0; l < c.layers; ++l)
        zero.push_back({tape.constant(numerics::Tensor<double>({1, c.width})), tape.constant(numerics::Tensor<double>({1, c.width}))});
    auto plain = impute_forward(bind, c, batch).value();
    auto prefixed = impute_forward(bind, c, batch, &zero).value();
    CHECK_FALSE(plain == prefixed);
}

TEST_CASE("forward validates prefix and sequence length") {
    auto c = tiny_config();
    auto model = make_model<double>(c, 4);
    Tape<double> tape;
    numerics::Binder<double> bind(tape, model.params);
    PrefixKV<double> one{{tape.constant(numerics::Tensor<double>({1, 8})), tape.constant(numerics::Tensor<double>({1, 8}))}};
    auto x = tape.constant(numerics::Tensor<double>({c.seq_length(), c.width}));
    CHECK_THROWS_AS(forward(bind, c, x, 1, c.seq_length(), &one), ConfigError);
    auto long_x = tape.constant(numerics::Tensor<double>({9, c.width}));
    CHECK_THROWS_AS(forward(bind, c, long_x, 1, 9), ConfigError);
    CHECK_THROWS_AS(forward(bind, c, x, 2, c.seq_length()), DimensionError);
    BackboneConfig bad = c;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.max_tokens = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("output head") {
    BackboneConfig big;
    big.layers = 1;
    auto m = make_model<float>(big, 0);
    CHECK(m.params.get("head.w").value.shape() == numerics::Shape{6 * 64, 96});

    auto c = tiny_config();
    auto model = make_model<double>(c, 6);
    {
        Tape<double> tape;
        numerics::Binder<double> bind(tape, model.params);
        model.params.get("head.b").value.fill(0.0);
        auto zero = tape.constant(numerics::Tensor<double>({2 * c.seq_length(), c.width}));
        auto y = output_head(bind, c, zero, 2, c.seq_length()).value();
        CHECK(y.shape() == numerics::Shape{2, c.window_length});
        for (double v : y.values()) CHECK(v == 0.0);
        CHECK_THROWS_AS(output_head(bind, c, zero, 3, c.seq_length()), ContractError);
    }
    std::mt19937_64 rng(7);
    auto hidden = patchfill::testing::random_tensor<double>({2 * c.seq_length(), c.width}, rng);
    auto target = patchfill::testing::random_tensor<double>({2, c.window_length}, rng);
    numerics::LossFn<double> f = [&](Tape<double>& tape) {
        numerics::Binder<double> bind(tape, model.params);
        auto y = output_head(bind, c, tape.constant(hidden), 2, c.seq_length());
        auto d = numerics::sub(y, tape.constant(target));
        return numerics::mean(numerics::mul(d, d));
    };
    std::vector<numerics::Parameter<double>*> ps{&model.params.get("head.w"), &model.params.get("head.b")};
    CHECK(numerics::grad_check<double>(f, ps, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("full imputation loss gradient") {
    auto c = tiny_config();
    auto model = make_model<double>(c, 8);
    std::mt19937_64 rng(9);
    auto windows = random_windows(2, c.window_length, rng);
    auto batch = embedding::make_batch<double>(windows, c.embedding());
    auto target = patchfill::testing::random_tensor<double>({2, c.window_length}, rng);
    numerics::LossFn<double> f = [&](Tape<double>& tape) {
        numerics::Binder<double> bind(tape, model.params);
        auto d = numerics::sub(impute_forward(bind, c, batch), tape.constant(target));
        return numerics::mean(numerics::mul(d, d));
    };
    auto params = model.params.all();
    params.pop_back();  // the contrastive matrix is not part of this loss
    auto r = numerics::grad_check<double>(f, params, 1e-4);
    INFO("worst " << r.worst_parameter << "[" << r.worst_index << "]");
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.checked > 1000);
}

TEST_CASE("forward is deterministic without dropout") {
    auto c = tiny_config();
    std::mt19937_64 rng(10);
    auto windows = random_windows(4, c.window_length, rng);
    auto run = [&] {
        auto model = make_model<float>(c, 11);
        auto batch = embedding::make_batch<float>(windows, c.embedding());
        Tape<float> tape;
        numerics::Binder<float> bind(tape, model.params);
        return impute_forward(bind, c, batch).value();
    };
    CHECK(run() == run());

    c.dropout = 0.5;
    auto model = make_model<float>(c, 11);
    auto batch = embedding::make_batch<float>(windows, c.embedding());
    Tape<float> tape;
    numerics::Binder<float> bind(tape, model.params);
    Rng r1(1), r2(1);
    CHECK(impute_forward<float>(bind, c, batch, nullptr, &r1).value() == impute_forward<float>(bind, c, batch, nullptr, &r2).value());
    CHECK_FALSE(impute_forward(bind, c, batch).value() == impute_forward<float>(bind, c, batch, nullptr, &r1).value());
}

TEST_CASE("compose_imputation") {
    data::SeriesWindow w;
    w.values = {1.5, 2.5, 3.5, 4.5};
    w.mask = {1, 1, 1, 1};
    data::RevinStats st{3.0, 2.0, 0.0, false};
    std::vector<double> model_out{9, 9, 9, 9};
    CHECK(compose_imputation(w, st, model_out) == w.values);
    w.mask = {0, 0, 0, 0};
    CHECK(compose_imputation(w, st, model_out) == std::vector<double>(4, 21.0));
    w.mask = {1, 0, 1, 0};
    auto half = compose_imputation(w, st, model_out);
    CHECK(half == std::vector<double>{1.5, 21.0, 3.5, 21.0});
    CHECK_THROWS_AS(compose_imputation(w, st, std::vector<double>(3, 0.0)), DimensionError);
}

TEST_CASE("model checkpoint round trip") {
    auto c = tiny_config();
    c.domains = {"a", "b"};
    auto model = make_model<float>(c, 12);
    auto ckpt = to_checkpoint(model);
    auto loaded = from_checkpoint<float>(numerics::Checkpoint::deserialize(ckpt.serialize()));
    CHECK(loaded.config.domains == c.domains);
    CHECK(loaded.config.layers == c.layers);
    for (auto* p : model.params.all()) CHECK(loaded.params.get(p->name).value == p->value);

    auto other = c;
    other.width = 16;
    try {
        check_compatible(c, other);
        FAIL("expected mismatch");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("width") != std::string::npos);
    }
    numerics::Checkpoint partial;
    partial.put_scalar("meta.layers", 2);
    CHECK_THROWS_AS(read_config(partial), FormatError);

    // Shape mismatch names the field.
    auto wide = make_model<float>(other, 1);
    try {
        ckpt.load_into(wide.params);
        FAIL("expected shape error");
    } catch (const LookupError& e) {
        CHECK(std::string(e.what()).find("embed.") != std::string::npos);
    }
}
