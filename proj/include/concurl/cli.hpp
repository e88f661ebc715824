// Experiment-runner entry points. The subcommand implementations live in
// the library so tests can drive them directly; tools/concurl_main.cpp is
// a thin wrapper.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "concurl/dataio.hpp"
#include "concurl/trainer.hpp"

namespace concurl::cli {

inline constexpr const char* kCodeVersion = "concurl 0.1.0";

// Flat key-value config file: one `key = value` per line, '#' comments.
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Precedence: flag override > config file > default. Unknown keys and bad
// values are collected and reported together.
TrainConfig resolve_train_config(const std::string& config_path,
                                 const std::map<std::string, std::string>& flag_overrides,
                                 std::vector<std::string>& errors);

// "blobs:k=3,n=50,dim=2[,spread=0.5][,separation=8.0][,seed=1]"
Dataset dataset_from_synth_spec(const std::string& spec);

// Loads --dataset CSV or generates --synth data (exactly one must be given).
Dataset resolve_dataset(const std::string& dataset_path, const std::string& synth_spec,
                        bool unlabeled);

std::uint64_t dataset_checksum(const Dataset& ds);

struct TrainArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;  // config-key -> value from flags
    std::string dataset_path;
    std::string synth_spec;
    bool unlabeled = false;
    std::string out_dir;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
    std::string checkpoint_path;
    std::string dataset_path;
    std::string synth_spec;
    std::string out_dir;  // empty = print metrics to stdout only
    int retrieval_queries = 0;
};
int cmd_eval(const EvalArgs& args);

struct SweepArgs {
    TrainArgs base;
    std::vector<double> tau_id_grid;
    std::vector<double> lr_grid;
    std::vector<int> m_grid;
    std::vector<int> proj_dim_grid;
    int jobs = 1;
};
int cmd_sweep(const SweepArgs& args);

struct SynthDemoArgs {
    std::string out_dir;
    std::uint64_t seed = 11;
};
int cmd_synth_demo(const SynthDemoArgs& args);

struct DiversityArgs {
    std::string checkpoint_path;
    std::string dataset_path;
    std::string synth_spec;
    bool unlabeled = false;
    std::string out_path;  // optional JSON output
};
int cmd_diversity(const DiversityArgs& args);

// Full argv entry point (CLI11 parsing + dispatch).
int run(int argc, char** argv);

}  // namespace concurl::cli
