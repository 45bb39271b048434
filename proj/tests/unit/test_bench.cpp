#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "patchfill/bench/baselines.hpp"
#include "patchfill/bench/config.hpp"
#include "patchfill/bench/protocol.hpp"
#include "patchfill/data/synthetic.hpp"
#include "patchfill/error.hpp"

using namespace patchfill;
using namespace patchfill::bench;

namespace {

data::SeriesWindow window(std::vector<double> values, data::Mask mask) {
    data::SeriesWindow w;
    w.values = std::move(values);
    w.mask = std::move(mask);
    return w;
}

// Selection by counting: the k-th smallest is the value with at most k
// smaller elements and more than k elements <= it.
double kth_smallest(const std::vector<double>& xs, std::size_t k) {
    for (double x : xs) {
        std::size_t less = 0, less_eq = 0;
        for (double y : xs) {
            less += y < x;
            less_eq += y <= x;
        }
        if (less <= k && k < less_eq) return x;
    }
    return NAN;
}

std::vector<double> median_oracle(const data::SeriesWindow& w) {
    std::vector<double> seen;
    for (std::size_t i = 0; i < w.length(); ++i)
        if (w.mask[i]) seen.push_back(w.values[i]);
    double m = 0.0;
    if (!seen.empty()) {
        const std::size_t n = seen.size();
        m = n % 2 ? kth_smallest(seen, n / 2) : (kth_smallest(seen, n / 2 - 1) + kth_smallest(seen, n / 2)) / 2.0;
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < w.length(); ++i) out.push_back(w.mask[i] ? w.values[i] : m);
    return out;
}

std::vector<double> last_oracle(const data::SeriesWindow& w) {
    std::vector<double> out;
    for (std::size_t i = 0; i < w.length(); ++i) {
        double v = 0.0;
        bool found = false;
        for (std::size_t j = i + 1; j-- > 0;) {
            if (w.mask[j]) {
                v = w.values[j];
                found = true;
                break;
            }
        }
        for (std::size_t j = i; !found && j < w.length(); ++j) {
            if (w.mask[j]) {
                v = w.values[j];
                found = true;
            }
        }
        out.push_back(v);
    }
    return out;
}

data::MultivariateSeries toy_series(std::size_t variables, std::size_t steps, std::uint64_t seed,
                                    const std::string& domain = "toy") {
    data::MultivariateSeries s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(-40, 40);
    for (std::size_t v = 0; v < variables; ++v) s.names.push_back("v" + std::to_string(v));
    s.steps = steps;
    s.domain = domain;
    for (std::size_t i = 0; i < variables * steps; ++i) {
        s.values.push_back(d(rng) / 8.0);
        s.mask.push_back(rng() % 10 != 0);
    }
    return s;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("patchfill_bench_" + name);
    std::filesystem::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("baseline examples") {
    const double nan = NAN;
    CHECK(impute_median(window({1, 2, nan, 4}, {1, 1, 0, 1})) == std::vector<double>{1, 2, 2, 4});
    CHECK(impute_median(window({5, 6}, {0, 0})) == std::vector<double>{0, 0});
    CHECK(impute_median(window({3, 1, 2}, {1, 1, 1})) == std::vector<double>{3, 1, 2});
    CHECK(impute_median(window({1, 0, 4, 7}, {1, 0, 1, 1})) == std::vector<double>{1, 4, 4, 7});
    CHECK(impute_median(window({1, 0, 4}, {1, 0, 1})) == std::vector<double>{1, 2.5, 4});
    CHECK(impute_last(window({1, 0, 0, 4}, {1, 0, 0, 1})) == std::vector<double>{1, 1, 1, 4});
    CHECK(impute_last(window({0, 0, 3, 0}, {0, 0, 1, 0})) == std::vector<double>{3, 3, 3, 3});
    CHECK(impute_last(window({2, 9}, {1, 1})) == std::vector<double>{2, 9});
    CHECK(impute_last(window({2, 9}, {0, 0})) == std::vector<double>{0, 0});
}

TEST_CASE("baselines match brute-force references on 1000 random cases") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t L = 1 + rng() % 40;
        data::SeriesWindow w;
        std::normal_distribution<double> g(0.0, 3.0);
        const unsigned density = rng() % 5;  // 0 gives fully missing windows
        for (std::size_t t = 0; t < L; ++t) {
            // Repeated values exercise ties in the median.
            w.values.push_back(rng() % 3 == 0 ? std::round(g(rng)) : g(rng));
            w.mask.push_back(density != 0 && rng() % 5 < density);
        }
        CHECK(impute_median(w) == median_oracle(w));
        CHECK(impute_last(w) == last_oracle(w));
    }
}

TEST_CASE("metric examples") {
    const std::vector<double> truth{1, 2, 3, 4};
    const data::Mask all{1, 1, 1, 1};
    auto m = metric_mse_mae(truth, truth, all);
    CHECK(m.mse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.count == 4);
    m = metric_mse_mae(std::vector<double>{2, 3, 3, 4}, truth, data::Mask{1, 1, 0, 0});
    CHECK(m.mse == 1.0);
    CHECK(m.mae == 1.0);
    CHECK(m.count == 2);
    m = metric_mse_mae(std::vector<double>{2, 2, 0, 4}, truth, data::Mask{1, 0, 1, 0});
    CHECK(m.mse == 5.0);
    CHECK(m.mae == 2.0);
    CHECK_THROWS_AS(metric_mse_mae(truth, truth, data::Mask{0, 0, 0, 0}), UndefinedMetric);
    CHECK_THROWS_AS(metric_mse_mae(truth, truth, data::Mask{1, 1}), DimensionError);
}

TEST_CASE("key-value config") {
    const auto kv = KeyValueConfig::parse("# header\n a = 1 \nrates = 0.1, 0.5 # trailing\n\nflag=yes\nname=x y\n");
    CHECK(kv.count("a", 0) == 1);
    CHECK(kv.reals("rates", {}) == std::vector<double>{0.1, 0.5});
    CHECK(kv.flag("flag", false));
    CHECK(kv.text("name") == "x y");
    CHECK(kv.real("missing", 2.5) == 2.5);
    CHECK_THROWS_AS(kv.text("missing"), ConfigError);
    CHECK_THROWS_AS(kv.count("name", 0), ConfigError);
    CHECK_THROWS_AS(kv.check_known({"a", "rates"}), ConfigError);
    CHECK_NOTHROW(kv.check_known({"a", "rates", "flag", "name"}));
    CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse("just words\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/file.cfg"), ConfigError);

    auto pc = ProtocolConfig::from(KeyValueConfig::parse("data = a.csv,b.csv\nrates=0.2\npatterns=continuous\n"));
    CHECK(pc.data.size() == 2);
    CHECK(pc.rates == std::vector<double>{0.2});
    CHECK(pc.patterns == std::vector<data::MaskPattern>{data::MaskPattern::continuous});
    CHECK_THROWS_AS(ProtocolConfig::from(KeyValueConfig::parse("data=a.csv\nrates=0\n")), ConfigError);
    CHECK_THROWS_AS(ProtocolConfig::from(KeyValueConfig::parse("data=a.csv\nmodels=\n")), ConfigError);
    CHECK_THROWS_AS(ProtocolConfig::from(KeyValueConfig::parse("data=a.csv\nmodels=mean\n")), ConfigError);
    CHECK_THROWS_AS(ProtocolConfig::from(KeyValueConfig::parse("rates=0.5\n")), ConfigError);
}

TEST_CASE("corpus ids are global across datasets") {
    auto c = make_corpus({toy_series(4, 20, 1, "a"), toy_series(5, 20, 2, "b")}, {1, 1, 1}, 7);
    CHECK(c.domains() == std::vector<std::string>{"a", "b"});
    CHECK(c.datasets[1].offset == 4);
    const auto test = corpus_variables(c, Part::test);
    const auto train = corpus_variables(c, Part::train);
    for (auto v : test) CHECK(std::find(train.begin(), train.end(), v) == train.end());
    const auto windows = corpus_windows(c, Part::test, 10, 10);
    CHECK(windows.size() == 2 * test.size());
    for (const auto& w : windows) CHECK(std::find(test.begin(), test.end(), w.variable) != test.end());
    CHECK_THROWS_AS(make_corpus({toy_series(4, 20, 1, "a"), toy_series(4, 20, 2, "a")}, {1, 1, 1}, 7), ConfigError);
}

TEST_CASE("protocol baselines reproduce a brute-force evaluation") {
    const auto corpus = make_corpus({toy_series(6, 48, 3)}, {1, 1, 1}, 5);
    ProtocolConfig pc;
    pc.window_length = 16;
    pc.patch_length = 4;
    pc.rates = {0.25, 0.5};
    pc.seed = 99;
    for (bool raw : {false, true}) {
        pc.raw_metrics = raw;
        const auto report = run_protocol(pc, corpus, nullptr, {});
        REQUIRE(report.cells.size() == 2 * 2 * 2);
        std::size_t cell = 0;
        for (const auto& model : pc.models) {
            for (auto pattern : pc.patterns) {
                for (double rate : pc.rates) {
                    double sq = 0, ab = 0;
                    std::size_t n = 0;
                    const auto& ds = corpus.datasets[0];
                    for (std::size_t v : ds.split.test) {
                        for (std::size_t k = 0; k * 16 + 16 <= 48; ++k) {
                            data::SeriesWindow w;
                            for (std::size_t t = k * 16; t < k * 16 + 16; ++t) {
                                w.values.push_back(ds.series.value(t, v));
                                w.mask.push_back(ds.series.observed(t, v));
                            }
                            const auto keep = data::make_mask(pattern, 16, rate, eval_mask_seed(99, v, k, rate, pattern));
                            data::SeriesWindow vis = w;
                            double sum = 0, cnt = 0;
                            for (std::size_t t = 0; t < 16; ++t) {
                                vis.mask[t] = w.mask[t] && keep[t];
                                if (vis.mask[t]) {
                                    sum += w.values[t];
                                    ++cnt;
                                }
                            }
                            const double mean = cnt ? sum / cnt : 0.0;
                            double var = 0;
                            for (std::size_t t = 0; t < 16; ++t)
                                if (vis.mask[t]) var += (w.values[t] - mean) * (w.values[t] - mean);
                            const double sd = cnt ? std::sqrt(var / cnt) : 1.0;
                            const double scale = sd > 0 ? std::sqrt(sd * sd + 1e-10) : 1.0;
                            const auto imp = model == "median" ? median_oracle(vis) : last_oracle(vis);
                            for (std::size_t t = 0; t < 16; ++t) {
                                if (!(w.mask[t] && !keep[t])) continue;
                                const double d = raw ? imp[t] - w.values[t]
                                                     : (imp[t] - mean) / scale - (w.values[t] - mean) / scale;
                                sq += d * d;
                                ab += std::abs(d);
                                ++n;
                            }
                        }
                    }
                    const auto& c = report.cells[cell++];
                    CHECK(c.model == model);
                    CHECK(c.rate == rate);
                    CHECK(c.count == n);
                    if (raw) {
                        CHECK(c.mse == sq / n);
                        CHECK(c.mae == ab / n);
                    } else {
                        CHECK(std::abs(c.mse - sq / n) <= 1e-12 * std::max(1.0, sq / n));
                        CHECK(std::abs(c.mae - ab / n) <= 1e-12 * std::max(1.0, ab / n));
                    }
                }
            }
        }
    }
}

TEST_CASE("report shapes, determinism and round trip") {
    const auto corpus = make_corpus({toy_series(6, 96, 4)}, {1, 1, 1}, 1);
    ProtocolConfig pc;
    pc.window_length = 32;
    pc.patch_length = 8;
    pc.rates = {0.1};
    pc.patterns = {data::MaskPattern::random};
    pc.models = {"median"};
    CHECK(run_protocol(pc, corpus, nullptr, {}).cells.size() == 1);

    pc = ProtocolConfig{};
    pc.window_length = 32;
    pc.patch_length = 8;
    const auto report = run_protocol(pc, corpus, nullptr, {});
    CHECK(report.cells.size() == 36);
    const auto csv = render_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 36 + 2);
    CHECK(render_csv(run_protocol(pc, corpus, nullptr, {})) == csv);
    CHECK(render_jsonl(run_protocol(pc, corpus, nullptr, {})) == render_jsonl(report));

    for (const auto& a : report.averages()) {
        double mse = 0;
        int k = 0;
        for (const auto& c : report.cells) {
            if (c.model != a.model) continue;
            mse += c.mse;
            ++k;
        }
        CHECK(k == 18);
        CHECK(std::abs(a.mse - mse / k) <= 1e-12);
    }

    const auto parsed = parse_report_csv(csv);
    CHECK(parsed.cells == report.cells);
    CHECK(render_csv(parsed) == csv);
    CHECK(render_csv(BenchReport{}) == "model,pattern,rate,mse,mae,count\n");
    CHECK(parse_report_csv(render_csv(BenchReport{})).cells.empty());
    CHECK_THROWS_AS(parse_report_csv("bad header\n"), FormatError);
    std::string tampered = csv;
    tampered.replace(tampered.rfind(",average,,") + 10, 1, "9");
    CHECK_THROWS_AS(parse_report_csv(tampered), FormatError);

    const auto dir = temp_dir("out");
    render_report(report, dir);
    std::ifstream in(dir / "report.csv");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text == csv);
    CHECK(std::filesystem::exists(dir / "report.jsonl"));
    CHECK_THROWS_AS(render_report(report, dir / "report.csv" / "nested"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("protocol with a model: leakage guard and config checks") {
    data::SinusoidSpec spec;
    spec.variables = 6;
    spec.steps = 48;
    const auto corpus = make_corpus({data::sinusoid_series(spec)}, {1, 1, 1}, 2);
    backbone::BackboneConfig bc;
    bc.layers = 1;
    bc.heads = 2;
    bc.width = 8;
    bc.patch_length = 4;
    bc.window_length = 16;
    bc.max_tokens = 8;
    auto model = backbone::make_model<float>(bc, 1);
    auto bundle = adaptation::make_prefix_bundle(model, {}, 2);

    ProtocolConfig pc;
    pc.window_length = 16;
    pc.patch_length = 4;
    pc.rates = {0.5};
    pc.models = {"patchfill", "patchfill+prefix", "median"};
    const auto train = corpus_variables(corpus, Part::train);
    const auto report = run_protocol(pc, corpus, &model, train, &bundle);
    CHECK(report.cells.size() == 6);
    for (const auto& c : report.cells) CHECK(std::isfinite(c.mse));

    CHECK_THROWS_AS(run_protocol(pc, corpus, &model, corpus_variables(corpus, Part::test), &bundle), ConfigError);
    CHECK_THROWS_AS(run_protocol(pc, corpus, &model, train, nullptr), ConfigError);
    CHECK_THROWS_AS(run_protocol(pc, corpus, nullptr, train, &bundle), ConfigError);
    pc.window_length = 32;
    CHECK_THROWS_AS(run_protocol(pc, corpus, &model, train, &bundle), ConfigError);
}
