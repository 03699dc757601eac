// fedzmg command-line driver.
//
// Exit status: 0 success, 1 runtime or I/O failure, 2 configuration error,
// 3 divergence, 4 theory check failed.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fedzmg/commands.hpp"
#include "fedzmg/config.hpp"
#include "fedzmg/errors.hpp"
#include "fedzmg/io.hpp"
#include "fedzmg/results.hpp"

namespace fs = std::filesystem;
using namespace fedzmg;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kTheory = 4 };

std::optional<fs::path> opt_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

int cmd_run(const std::string& config, const std::string& out_dir, const std::string& rounds_file, std::size_t workers) {
    auto rc = load_run_config(config);
    if (workers > 0) {
        rc.base.workers = workers;
        for (auto& [a, c] : rc.per_algorithm) c.workers = workers;
    }
    ResultsSink sink(resolve_output_dir(opt_path(out_dir)), rounds_file);
    const auto outcomes = run_cells(rc, sink, &std::cerr);
    std::size_t diverged = 0;
    for (const auto& o : outcomes) diverged += o.divergence.has_value();
    std::cout << outcomes.size() << " cells written to " << sink.rounds_path().string() << "\n";
    if (diverged) {
        std::cerr << "error: " << diverged << " of " << outcomes.size() << " cells diverged\n";
        return kDiverged;
    }
    return kOk;
}

int cmd_grid(const std::string& config, const std::string& out_dir, const std::string& out_file,
             const std::string& algorithm, std::size_t jobs) {
    auto rc = load_run_config(config);
    if (!algorithm.empty()) rc.grid.algorithm = parse_algorithm(algorithm);
    const Algorithm alg = rc.grid.algorithm.value_or(rc.algorithms.front());
    auto base = rc.for_algorithm(alg);
    base.seed = rc.seeds.front();
    const auto fed = load_federation(base);
    GridResult g;
    try {
        g = grid_search(base, rc.grid, fed, jobs);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    }
    const fs::path dir = resolve_output_dir(opt_path(out_dir));
    io::write_file(dir / out_file, format_grid_csv(g));
    const auto& b = g.cells[g.best];
    std::size_t diverged = 0;
    for (const auto& c : g.cells) diverged += c.diverged;
    std::cout << g.cells.size() << " cells (" << diverged << " diverged), best client_lr "
              << io::format_real(b.client_lr) << " server_lr " << io::format_real(b.server_lr) << " accuracy "
              << io::format_real(b.final_mean_acc) << "\n";
    return kOk;
}

int cmd_analyze(const std::string& rounds, AnalyzeOptions opt, const std::string& rule, const std::string& out_dir,
                const std::string& out_file) {
    if (rule == "consistent") {
        opt.rule = ThresholdRule::Consistent;
    } else if (rule == "first-crossing") {
        opt.rule = ThresholdRule::FirstCrossing;
    } else {
        throw ConfigError("rule", "expected consistent or first-crossing");
    }
    const std::string text = io::read_file(rounds);
    const auto summary = analyze_rounds(parse_rounds_csv(text), opt, text_hash(text));
    const std::string csv = format_summary_csv(summary);
    const fs::path dir = resolve_output_dir(opt_path(out_dir));
    io::write_file(dir / out_file, csv);
    std::cout << csv;
    return kOk;
}

int cmd_theory(const std::string& config, const std::string& out_dir, std::size_t workers) {
    const RunConfig rc = config.empty() ? parse_run_config("") : load_run_config(config);
    const auto rep = verify_theory(rc.theory, std::max<std::size_t>(1, workers));
    print_theory_report(rep, std::cout);
    const std::string hash = config.empty() ? text_hash("") : text_hash(io::read_file(config));
    io::write_file(resolve_output_dir(opt_path(out_dir)) / "theory_delta.csv", format_delta_csv(rep, hash));
    return rep.ok ? kOk : kTheory;
}

int cmd_data_report(const std::string& config, const std::string& out_dir, const std::string& out_file,
                    const std::vector<std::size_t>& clients, bool no_kl) {
    const auto rc = load_run_config(config);
    const auto fed = load_federation(rc.base);
    std::optional<std::vector<ClientId>> subset;
    if (!clients.empty()) subset = std::vector<ClientId>(clients.begin(), clients.end());
    const std::size_t classes = rc.base.model.is_classifier() ? rc.base.model.classes : 1;
    if (classes < 2) throw ConfigError("data.task", "label heterogeneity needs a classification federation");
    const std::string csv = data_report_csv(fed, classes, subset, !no_kl, config_hash(rc.base));
    io::write_file(resolve_output_dir(opt_path(out_dir)) / out_file, csv);
    std::cout << csv;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with zero-mean gradient projection"};
    app.set_version_flag("--version", std::string(kArtifactVersion));
    app.require_subcommand(1);
    std::string out_dir;
    app.add_option("-o,--output-dir", out_dir, std::string("Output directory (default: $") + kOutputDirEnv + " or " +
                                                   kDefaultOutputDir + ")");

    std::string config;
    std::size_t workers = 0;

    auto* run = app.add_subcommand("run", "Run every algorithm and seed of a config");
    std::string rounds_file = "rounds.csv";
    run->add_option("config", config, "Experiment config file")->required();
    run->add_option("--rounds-file", rounds_file, "Rounds CSV name inside the output directory");
    run->add_option("-w,--workers", workers, "Client worker threads (overrides the config)");

    auto* grid = app.add_subcommand("grid-search", "Client/server learning-rate grid search");
    std::string grid_out = "grid.csv";
    std::string grid_alg;
    std::size_t jobs = 1;
    grid->add_option("config", config, "Experiment config file")->required();
    grid->add_option("--out", grid_out, "Grid CSV name inside the output directory");
    grid->add_option("--algorithm", grid_alg, "Algorithm to tune (default: grid.algorithm or the first one)");
    grid->add_option("-j,--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);

    auto* analyze = app.add_subcommand("analyze", "Summarize a rounds CSV");
    std::string rounds_path;
    AnalyzeOptions aopt;
    std::string rule = "consistent";
    std::string summary_out = "summary.csv";
    std::vector<std::string> hashes;
    analyze->add_option("rounds", rounds_path, "Rounds CSV")->required()->check(CLI::ExistingFile);
    analyze->add_option("-t,--threshold", aopt.thresholds, "Accuracy threshold (repeatable)")->required();
    analyze->add_option("--window", aopt.window, "Moving-average window");
    analyze->add_option("--final-window", aopt.final_window, "Rounds averaged for final accuracy");
    analyze->add_option("--rule", rule, "consistent or first-crossing");
    analyze->add_option("--alpha", aopt.alpha, "Significance level");
    analyze->add_option("--algorithms", aopt.expected_algorithms, "Algorithms that must be present")->delimiter(',');
    analyze->add_option("--config-hash", hashes, "Only use rows with these config hashes")->delimiter(',');
    analyze->add_option("--out", summary_out, "Summary CSV name inside the output directory");

    auto* theory = app.add_subcommand("verify-theory", "Check the projected noise variance and the convergence bound");
    std::string theory_config;
    theory->add_option("config", theory_config, "Config file with a [theory] section")->check(CLI::ExistingFile);
    theory->add_option("-w,--workers", workers, "Monte Carlo worker threads");

    auto* report = app.add_subcommand("data-report", "Per-client label heterogeneity of a federation");
    std::string report_out = "data_report.csv";
    std::vector<std::size_t> clients;
    bool no_kl = false;
    report->add_option("config", config, "Experiment config file")->required();
    report->add_option("--clients", clients, "Restrict to these client ids")->delimiter(',');
    report->add_flag("--no-kl", no_kl, "Skip the divergence from the pooled label distribution");
    report->add_option("--out", report_out, "Report CSV name inside the output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, out_dir, rounds_file, workers);
        if (*grid) return cmd_grid(config, out_dir, grid_out, grid_alg, jobs);
        if (*analyze) {
            aopt.config_hashes.insert(hashes.begin(), hashes.end());
            return cmd_analyze(rounds_path, aopt, rule, out_dir, summary_out);
        }
        if (*theory) return cmd_theory(theory_config, out_dir, workers);
        if (*report) return cmd_data_report(config, out_dir, report_out, clients, no_kl);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
