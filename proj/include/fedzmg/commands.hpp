#pragma once

// Implementations behind the command-line subcommands. Each returns data
// and leaves printing and exit codes to the caller.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "fedzmg/analysis.hpp"
#include "fedzmg/config.hpp"
#include "fedzmg/engine.hpp"
#include "fedzmg/results.hpp"
#include "fedzmg/theory.hpp"

namespace fedzmg {

// ---- run ---------------------------------------------------------------------

struct CellOutcome {
    std::string config_hash;
    Algorithm algorithm = Algorithm::FedZmg;
    std::uint64_t seed = 0;
    std::size_t rounds_written = 0;
    std::optional<std::string> divergence;  // diagnostic when the cell diverged
};

// Runs every (algorithm, seed) cell against one shared federation. A
// diverged cell keeps its partial rounds and the remaining cells still run.
std::vector<CellOutcome> run_cells(const RunConfig& rc, ResultsSink& sink, std::ostream* log = nullptr);

// ---- grid-search -------------------------------------------------------------

struct GridCell {
    double client_lr = 0.0;
    double server_lr = 0.0;
    double final_mean_acc = 0.0;
    bool diverged = false;
    bool is_best = false;
};

struct GridResult {
    std::string config_hash;
    std::vector<GridCell> cells;  // client_lr major
    std::size_t best = 0;
};

// Throws Error when every cell diverges.
GridResult grid_search(const ExperimentConfig& base, const GridSearchSpec& spec, const Federation& fed,
                       std::size_t jobs = 1);

std::string format_grid_csv(const GridResult& g);
std::vector<GridCell> parse_grid_csv(const std::string& text);

struct GridPivot {
    std::vector<double> client_lrs;  // rows
    std::vector<double> server_lrs;  // columns
    Eigen::MatrixXd accuracy;
};

// Throws IoError unless the cells form a complete rectangular grid.
GridPivot pivot_grid(const std::vector<GridCell>& cells);

// ---- analyze -----------------------------------------------------------------

struct AnalyzeOptions {
    std::vector<double> thresholds;
    std::size_t window = 10;
    std::size_t final_window = 100;
    ThresholdRule rule = ThresholdRule::Consistent;
    double alpha = 0.05;
    std::vector<std::string> expected_algorithms;  // each must have a series
    std::set<std::string> config_hashes;           // empty = all rows
};

struct SummaryRow {
    std::string metric;
    std::string algorithm;
    std::string comparator;
    std::optional<double> threshold;
    std::optional<double> value;
    std::optional<double> p_value;
    std::optional<bool> significant;
    std::string note;
};

struct Summary {
    std::string input_hash;
    std::vector<SummaryRow> rows;
};

// Metrics run on seed-averaged series; t-tests pair per-seed final
// accuracies of fedzmg against every other algorithm.
Summary analyze_rounds(const std::vector<RoundsRow>& rows, const AnalyzeOptions& opt, std::string input_hash = {});
std::string format_summary_csv(const Summary& s);

// ---- verify-theory -----------------------------------------------------------

struct LemmaCase {
    std::string name;
    double analytic = 0.0;
    double matrix_algebra = 0.0;  // tr(Phi Sigma Phi) by explicit products
    std::optional<double> expected;
    double empirical = 0.0;
    bool ok = false;
};

struct TheoryReport {
    std::vector<LemmaCase> lemma;
    ConvergenceCheck convergence;
    bool constants_ordered = false;
    bool ok = false;
};

// Precondition violations propagate as ConfigError.
TheoryReport verify_theory(const TheorySettings& s, std::size_t workers = 1);
void print_theory_report(const TheoryReport& r, std::ostream& os);
std::string format_delta_csv(const TheoryReport& r, const std::string& hash);

// ---- data-report -------------------------------------------------------------

// Per-client rows followed by mean and std rows. `subset` restricts the
// report to those client ids; unknown ids throw ConfigError.
std::string data_report_csv(const Federation& fed, std::size_t classes, const std::optional<std::vector<ClientId>>& subset,
                            bool include_kl, const std::string& hash);

}  // namespace fedzmg
