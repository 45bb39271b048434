#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "patchfill/error.hpp"

using namespace patchfill;

int main(int argc, char** argv) {
    CLI::App app{"patchfill: masked-patch imputation for multivariate time series"};
    app.require_subcommand(1);

    cli::TrainArgs train;
    auto* t = app.add_subcommand("train", "pre-train a backbone on a corpus named in a config file");
    t->add_option("--config", train.config, "key=value config")->required()->check(CLI::ExistingFile);
    t->add_option("--out", train.out, "checkpoint to write")->required();
    t->add_option("--log", train.log, "JSONL training log");
    t->add_option("--state", train.state, "resumable trainer state");

    cli::FinetuneArgs ft;
    auto* f = app.add_subcommand("finetune", "fit a domain or inter-variable prefix on a frozen backbone");
    f->add_option("--base", ft.base, "backbone checkpoint")->required()->check(CLI::ExistingFile);
    f->add_option("--data", ft.data, "CSV series")->required()->check(CLI::ExistingFile);
    f->add_option("--out", ft.out, "prefix file to write")->required();
    f->add_option("--config", ft.config, "key=value config")->check(CLI::ExistingFile);
    f->add_option("--log", ft.log, "JSONL training log");
    f->add_option("--mode", ft.mode, "domain or intervar")->check(CLI::IsMember({"domain", "intervar"}));
    f->add_option("--domain", ft.domain, "domain label (default: file stem)");

    cli::ImputeArgs im;
    auto* i = app.add_subcommand("impute", "fill missing values of a CSV series");
    i->add_option("--ckpt", im.ckpt, "backbone checkpoint")->required()->check(CLI::ExistingFile);
    i->add_option("--prefix", im.prefix, "prefix file")->check(CLI::ExistingFile);
    i->add_option("--data", im.data, "CSV series")->required()->check(CLI::ExistingFile);
    i->add_option("--mask", im.mask, "CSV of 0/1 with the same shape; 0 hides a value")->check(CLI::ExistingFile);
    i->add_option("--out", im.out, "CSV to write")->required();
    i->add_option("--domain", im.domain, "domain label (default: file stem)");

    cli::ForecastArgs fc;
    auto* r = app.add_subcommand("forecast", "forecast the next patches of every variable");
    r->add_option("--ckpt", fc.ckpt, "backbone checkpoint")->required()->check(CLI::ExistingFile);
    r->add_option("--data", fc.data, "CSV series")->required()->check(CLI::ExistingFile);
    r->add_option("--horizon", fc.horizon, "patches to forecast")->check(CLI::PositiveNumber);
    r->add_option("--out", fc.out, "CSV to write")->required();
    r->add_option("--adapter", fc.adapter, "fitted forecaster; fitted on --data when absent")
        ->check(CLI::ExistingFile);
    r->add_option("--save-adapter", fc.save_adapter, "where to keep the forecaster fitted on --data");
    r->add_option("--config", fc.config, "key=value config for fitting")->check(CLI::ExistingFile);
    r->add_option("--domain", fc.domain, "domain label (default: file stem)");

    cli::BenchArgs bn;
    auto* b = app.add_subcommand("bench", "run the evaluation protocol");
    b->add_option("--config", bn.config, "key=value config")->required()->check(CLI::ExistingFile);
    b->add_option("--out", bn.out, "report directory")->required();

    cli::MaskgenArgs mg;
    auto* m = app.add_subcommand("maskgen", "print a keep-mask as one comma-separated line");
    m->add_option("--len", mg.length, "mask length")->required();
    m->add_option("--rate", mg.rate, "fraction hidden")->required();
    m->add_option("--pattern", mg.pattern, "random or continuous");
    m->add_option("--seed", mg.seed, "seed");

    cli::SynthArgs sy;
    auto* s = app.add_subcommand("synth", "write a synthetic sinusoid corpus");
    s->add_option("--vars", sy.variables, "variables");
    s->add_option("--steps", sy.steps, "time steps");
    s->add_option("--seed", sy.seed, "seed");
    s->add_option("--noise", sy.noise, "noise standard deviation");
    s->add_option("--domain", sy.domain, "domain label");
    s->add_option("--out", sy.out, "CSV to write (stdout when absent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*t) return cli::run_train(train);
        if (*f) return cli::run_finetune(ft);
        if (*i) return cli::run_impute(im);
        if (*r) return cli::run_forecast(fc);
        if (*b) return cli::run_bench(bn);
        if (*m) return cli::run_maskgen(mg);
        if (*s) return cli::run_synth(sy);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
