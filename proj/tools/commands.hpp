#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace patchfill::cli {

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path out;
    std::filesystem::path log;
    // Trainer state is written here after every epoch and resumed from if present.
    std::filesystem::path state;
};

struct FinetuneArgs {
    std::filesystem::path base;
    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path config;
    std::filesystem::path log;
    std::string mode = "domain";
    std::string domain;
};

struct ImputeArgs {
    std::filesystem::path ckpt;
    std::filesystem::path prefix;
    std::filesystem::path data;
    std::filesystem::path mask;
    std::filesystem::path out;
    std::string domain;
};

struct ForecastArgs {
    std::filesystem::path ckpt;
    std::filesystem::path data;
    std::size_t horizon = 1;
    std::filesystem::path out;
    std::filesystem::path adapter;
    std::filesystem::path save_adapter;
    std::filesystem::path config;
    std::string domain;
};

struct BenchArgs {
    std::filesystem::path config;
    std::filesystem::path out;
};

struct MaskgenArgs {
    std::size_t length = 0;
    double rate = 0;
    std::string pattern = "random";
    std::uint64_t seed = 0;
};

struct SynthArgs {
    std::size_t variables = 20;
    std::size_t steps = 492;
    std::uint64_t seed = 1;
    double noise = 0.01;
    std::string domain = "sinusoid";
    std::filesystem::path out;
};

int run_train(const TrainArgs& a);
int run_finetune(const FinetuneArgs& a);
int run_impute(const ImputeArgs& a);
int run_forecast(const ForecastArgs& a);
int run_bench(const BenchArgs& a);
int run_maskgen(const MaskgenArgs& a);
int run_synth(const SynthArgs& a);

} // namespace patchfill::cli
