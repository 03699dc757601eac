#pragma once

// Sectioned key-value experiment files. Parsing is strict: unknown sections
// or keys are errors that name the field path.
//
//   [experiment]  algorithms, seeds, rounds, cohort, epochs, batch_size,
//                 eval_every, workers, divergence_threshold
//   [model]       kind, hidden, init
//   [data]        task, clients, classes, input_dim, samples_min,
//                 samples_max, dirichlet_alpha, bias_shift_scale,
//                 noise_scale, seed, fixture
//   [optim]       client_lr, server_lr, weight_decay, momentum,
//                 momentum_placement, adam_beta1, adam_beta2, adam_eps,
//                 lr_schedule, lr_beta, lr_gamma
//   [optim.<alg>] same keys as [optim], applied to one algorithm
//   [grid]        algorithm, client_lrs, server_lrs, rounds,
//                 selection_window, cohort, epochs
//   [theory]      see TheorySettings

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedzmg/engine.hpp"
#include "fedzmg/theory.hpp"

namespace fedzmg {

struct IniEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct IniSection {
    std::string name;
    std::vector<IniEntry> entries;
};

// '#' and ';' start comments. Keys must be unique within a section and
// sections may not repeat.
std::vector<IniSection> parse_ini(const std::string& text);

struct GridSearchSpec {
    std::optional<Algorithm> algorithm;  // unset: first configured algorithm
    std::vector<double> client_lrs = default_grid_values();
    std::vector<double> server_lrs = default_grid_values();
    std::size_t rounds = 50;
    std::size_t selection_window = 10;
    std::size_t cohort = 10;
    std::size_t epochs = 4;

    // 9 log-uniform values from 1e-3 to 1e1 inclusive.
    static std::vector<double> default_grid_values();
    void validate() const;
};

struct TheorySettings {
    TheoryConfig convergence;
    std::size_t lemma_trials = 100000;
    std::size_t lemma_dim = 8;
    std::size_t lemma_random_cases = 10;
    double lemma_sigma_sq = 2.0;
    double lemma_tolerance = 0.02;  // relative, Monte Carlo vs analytic
};

struct RunConfig {
    std::vector<Algorithm> algorithms = {Algorithm::FedZmg};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    ExperimentConfig base;
    std::map<Algorithm, ExperimentConfig> per_algorithm;  // base plus overrides
    GridSearchSpec grid;
    TheorySettings theory;

    // One resolved config per (algorithm, seed), algorithm-major.
    std::vector<ExperimentConfig> cells() const;
    ExperimentConfig for_algorithm(Algorithm a) const;
};

// Throws ConfigError for unknown fields, malformed values, and
// inconsistent settings. Relative fixture paths resolve against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical text of one resolved cell. It parses back to the same cell and
// its hash identifies the cell in every results file. The worker count is
// excluded because it never changes results.
std::string canonical_config_text(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
std::string text_hash(const std::string& text);

}  // namespace fedzmg
