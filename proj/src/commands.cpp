#include "fedzmg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "fedzmg/errors.hpp"
#include "fedzmg/io.hpp"
#include "fedzmg/rng.hpp"

namespace fedzmg {

using io::format_real;

std::vector<CellOutcome> run_cells(const RunConfig& rc, ResultsSink& sink, std::ostream* log) {
    const Federation fed = load_federation(rc.base);
    std::vector<CellOutcome> out;
    for (const auto& cell : rc.cells()) {
        CellOutcome o;
        o.config_hash = config_hash(cell);
        o.algorithm = cell.algorithm;
        o.seed = cell.seed;
        std::vector<RoundRecord> records;
        try {
            records = run_experiment(cell, fed).rounds;
        } catch (const DivergenceError& e) {
            records = e.partial_series();
            o.divergence = e.what();
        }
        sink.write_cell(cell, records);
        o.rounds_written = records.size();
        if (log) {
            *log << to_string(cell.algorithm) << " seed " << cell.seed << " [" << o.config_hash << "] "
                 << (o.divergence ? "diverged: " + *o.divergence : std::to_string(records.size()) + " rounds") << "\n";
        }
        out.push_back(std::move(o));
    }
    return out;
}

// ---- grid-search -------------------------------------------------------------

GridResult grid_search(const ExperimentConfig& base, const GridSearchSpec& spec, const Federation& fed,
                       std::size_t jobs) {
    spec.validate();
    ExperimentConfig cfg = base;
    if (spec.algorithm) cfg.algorithm = *spec.algorithm;
    cfg.rounds = spec.rounds;
    cfg.cohort = spec.cohort;
    cfg.epochs = spec.epochs;
    cfg.eval_every = 1;
    if (!cfg.model.is_classifier()) throw ConfigError("model.kind", "grid search selects by validation accuracy");
    cfg.validate(fed.clients.size());

    std::ostringstream id;
    id << canonical_config_text(cfg) << "\n[grid]\nclient_lrs =";
    for (double v : spec.client_lrs) id << " " << format_real(v);
    id << "\nserver_lrs =";
    for (double v : spec.server_lrs) id << " " << format_real(v);
    id << "\nselection_window = " << spec.selection_window << "\n";

    GridResult g;
    g.config_hash = text_hash(id.str());
    for (double c : spec.client_lrs) {
        for (double s : spec.server_lrs) g.cells.push_back({c, s, 0.0, false, false});
    }

    auto run_cell = [&](GridCell& cell) {
        ExperimentConfig c = cfg;
        c.client_lr = cell.client_lr;
        c.server_lr = cell.server_lr;
        try {
            const auto res = run_experiment(c, fed);
            AccuracySeries s;
            for (const auto& r : res.rounds) s.points.emplace_back(r.round, r.val_accuracy.value_or(0.0));
            const double acc = final_accuracy(s, spec.selection_window);
            if (std::isfinite(acc)) {
                cell.final_mean_acc = acc;
                return;
            }
        } catch (const DivergenceError&) {
        }
        cell.final_mean_acc = 0.0;
        cell.diverged = true;
    };

    const std::size_t w = std::max<std::size_t>(1, std::min(jobs, g.cells.size()));
    if (w == 1) {
        for (auto& cell : g.cells) run_cell(cell);
    } else {
        std::vector<std::exception_ptr> errors(w);
        {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < w; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t i = t; i < g.cells.size(); i += w) run_cell(g.cells[i]);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        if (g.cells[i].diverged) continue;
        if (!best || g.cells[i].final_mean_acc > g.cells[*best].final_mean_acc) best = i;
    }
    if (!best) throw Error("grid search: all " + std::to_string(g.cells.size()) + " cells diverged");
    g.best = *best;
    g.cells[g.best].is_best = true;
    return g;
}

std::string format_grid_csv(const GridResult& g) {
    std::string out = "config_hash,client_lr,server_lr,final10_mean_acc,diverged,is_best\n";
    for (const auto& c : g.cells) {
        out += g.config_hash + "," + format_real(c.client_lr) + "," + format_real(c.server_lr) + "," +
               format_real(c.final_mean_acc) + "," + (c.diverged ? "1" : "0") + "," + (c.is_best ? "1" : "0") + "\n";
    }
    return out;
}

std::vector<GridCell> parse_grid_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || io::trim(line) != "config_hash,client_lr,server_lr,final10_mean_acc,diverged,is_best") {
        throw IoError("grid csv: unexpected header");
    }
    std::vector<GridCell> cells;
    while (std::getline(in, line)) {
        if (io::trim(line).empty()) continue;
        const auto f = io::split(io::trim(line), ',');
        if (f.size() != 6) throw IoError("grid csv: expected 6 fields in '" + line + "'");
        cells.push_back({io::parse_real(f[1], "client_lr"), io::parse_real(f[2], "server_lr"),
                         io::parse_real(f[3], "final10_mean_acc"), f[4] == "1", f[5] == "1"});
    }
    return cells;
}

GridPivot pivot_grid(const std::vector<GridCell>& cells) {
    GridPivot p;
    for (const auto& c : cells) {
        if (std::find(p.client_lrs.begin(), p.client_lrs.end(), c.client_lr) == p.client_lrs.end()) {
            p.client_lrs.push_back(c.client_lr);
        }
        if (std::find(p.server_lrs.begin(), p.server_lrs.end(), c.server_lr) == p.server_lrs.end()) {
            p.server_lrs.push_back(c.server_lr);
        }
    }
    std::sort(p.client_lrs.begin(), p.client_lrs.end());
    std::sort(p.server_lrs.begin(), p.server_lrs.end());
    const auto rows = static_cast<Eigen::Index>(p.client_lrs.size());
    const auto cols = static_cast<Eigen::Index>(p.server_lrs.size());
    if (static_cast<std::size_t>(rows * cols) != cells.size()) throw IoError("pivot_grid: cells do not form a full grid");
    p.accuracy = Eigen::MatrixXd::Constant(rows, cols, std::nan(""));
    for (const auto& c : cells) {
        const auto i = std::find(p.client_lrs.begin(), p.client_lrs.end(), c.client_lr) - p.client_lrs.begin();
        const auto j = std::find(p.server_lrs.begin(), p.server_lrs.end(), c.server_lr) - p.server_lrs.begin();
        if (!std::isnan(p.accuracy(i, j))) throw IoError("pivot_grid: duplicate cell");
        p.accuracy(i, j) = c.final_mean_acc;
    }
    return p;
}

// ---- analyze -----------------------------------------------------------------

Summary analyze_rounds(const std::vector<RoundsRow>& rows, const AnalyzeOptions& opt, std::string input_hash) {
    if (opt.thresholds.empty()) throw ConfigError("analyze.thresholds", "at least one threshold is required");
    if (opt.window < 1) throw ConfigError("analyze.window", "must be >= 1");
    if (opt.final_window < 1) throw ConfigError("analyze.final_window", "must be >= 1");

    struct Key {
        std::string alg;
        std::uint64_t seed;
        bool operator<(const Key& o) const { return std::tie(alg, seed) < std::tie(o.alg, o.seed); }
    };
    std::map<Key, AccuracySeries> per_seed;
    std::map<Key, std::string> hash_of;
    for (const auto& r : rows) {
        if (!opt.config_hashes.empty() && !opt.config_hashes.count(r.config_hash)) continue;
        const Key k{r.algorithm, r.seed};
        auto [it, fresh] = hash_of.emplace(k, r.config_hash);
        if (!fresh && it->second != r.config_hash) {
            throw SeriesError("analyze: " + r.algorithm + " seed " + std::to_string(r.seed) +
                              " has rows from configs " + it->second + " and " + r.config_hash +
                              "; select one with a config hash filter");
        }
        auto& s = per_seed[k];
        s.algorithm = r.algorithm;
        s.seed = r.seed;
        if (r.val_accuracy) s.points.emplace_back(r.round, *r.val_accuracy);
    }
    std::map<std::string, std::vector<const AccuracySeries*>> by_alg;
    for (auto& [k, s] : per_seed) {
        std::sort(s.points.begin(), s.points.end());
        s.validate();
        if (s.points.empty()) {
            throw SeriesError("analyze: " + k.alg + " seed " + std::to_string(k.seed) + " has no evaluated rounds");
        }
        by_alg[k.alg].push_back(&s);
    }
    for (const auto& a : opt.expected_algorithms) {
        if (!by_alg.count(a)) throw SeriesError("analyze: no series for algorithm '" + a + "'");
    }
    if (by_alg.empty()) throw SeriesError("analyze: input has no series");

    std::map<std::string, AccuracySeries> mean_series;
    for (const auto& [alg, list] : by_alg) {
        AccuracySeries m{list.front()->points, alg, 0};
        for (std::size_t i = 1; i < list.size(); ++i) {
            const auto& pts = list[i]->points;
            if (pts.size() != m.points.size()) {
                throw SeriesError("analyze: " + alg + " seeds evaluate different rounds");
            }
            for (std::size_t j = 0; j < pts.size(); ++j) {
                if (pts[j].first != m.points[j].first) throw SeriesError("analyze: " + alg + " seeds evaluate different rounds");
                m.points[j].second += pts[j].second;
            }
        }
        for (auto& p : m.points) p.second /= static_cast<double>(list.size());
        mean_series[alg] = std::move(m);
    }

    Summary out;
    out.input_hash = std::move(input_hash);
    for (const auto& [alg, s] : mean_series) {
        for (double theta : opt.thresholds) {
            SummaryRow r{"rounds_to_threshold", alg, "", theta, std::nullopt, std::nullopt, std::nullopt, ""};
            if (s.size() < opt.window) {
                r.note = "series_shorter_than_window";
            } else if (auto t = rounds_to_threshold(s, theta, opt.window, opt.rule)) {
                r.value = static_cast<double>(*t);
            } else {
                r.note = "not_reached";
            }
            out.rows.push_back(std::move(r));
        }
        SummaryRow f{"final_accuracy", alg, "", std::nullopt, std::nullopt, std::nullopt, std::nullopt, ""};
        if (s.size() < opt.final_window) {
            f.note = "series_shorter_than_final_window";
        } else {
            f.value = final_accuracy(s, opt.final_window);
        }
        out.rows.push_back(std::move(f));
    }
    for (double theta : opt.thresholds) {
        const auto avg = post_threshold_average(mean_series, theta, opt.window, opt.rule);
        for (const auto& [alg, s] : mean_series) {
            SummaryRow r{"post_threshold_avg", alg, "", theta, std::nullopt, std::nullopt, std::nullopt, ""};
            if (avg) {
                r.value = avg->at(alg);
            } else {
                r.note = "not_reached_by_all";
            }
            out.rows.push_back(std::move(r));
        }
    }

    const std::string target = to_string(Algorithm::FedZmg);
    if (by_alg.count(target)) {
        std::map<std::uint64_t, const AccuracySeries*> zmg;
        for (const auto* s : by_alg[target]) zmg[s->seed] = s;
        for (const auto& [alg, list] : by_alg) {
            if (alg == target) continue;
            SummaryRow r{"t_test", target, alg, std::nullopt, std::nullopt, std::nullopt, std::nullopt, ""};
            std::vector<double> a, b;
            for (const auto* s : list) {
                const auto it = zmg.find(s->seed);
                if (it == zmg.end()) {
                    throw SeriesError("analyze: " + target + " seed " + std::to_string(s->seed) + " is missing (needed to pair with " + alg + ")");
                }
                if (s->size() < opt.final_window || it->second->size() < opt.final_window) {
                    r.note = "series_shorter_than_final_window";
                    break;
                }
                a.push_back(final_accuracy(*it->second, opt.final_window));
                b.push_back(final_accuracy(*s, opt.final_window));
            }
            if (list.size() != zmg.size()) {
                for (const auto& [seed, s] : zmg) {
                    const bool paired = std::any_of(list.begin(), list.end(), [&](const auto* x) { return x->seed == seed; });
                    if (!paired) throw SeriesError("analyze: " + alg + " seed " + std::to_string(seed) + " is missing (needed to pair with " + target + ")");
                }
            }
            if (r.note.empty()) {
                if (a.size() < 2) {
                    r.note = "too_few_seeds";
                } else {
                    try {
                        const auto t = paired_t_test(a, b);
                        r.value = t.t_statistic;
                        r.p_value = t.p_value;
                        r.significant = t.significant(opt.alpha);
                    } catch (const DegenerateVarianceError&) {
                        r.note = "degenerate_variance";
                    }
                }
            }
            out.rows.push_back(std::move(r));
        }
    }
    return out;
}

std::string format_summary_csv(const Summary& s) {
    auto opt_real = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
    std::string out = "config_hash,metric,algorithm,comparator,threshold,value,p_value,significant,note\n";
    for (const auto& r : s.rows) {
        out += s.input_hash + "," + r.metric + "," + r.algorithm + "," + r.comparator + "," + opt_real(r.threshold) + "," +
               opt_real(r.value) + "," + opt_real(r.p_value) + "," +
               (r.significant ? (*r.significant ? "true" : "false") : "") + "," + r.note + "\n";
    }
    return out;
}

// ---- verify-theory -----------------------------------------------------------

namespace {

double explicit_projected_trace(const Eigen::MatrixXd& cov) {
    const auto d = cov.rows();
    const Eigen::MatrixXd phi =
        Eigen::MatrixXd::Identity(d, d) - Eigen::MatrixXd::Constant(d, d, 1.0 / static_cast<double>(d));
    return (phi * cov * phi.transpose()).trace();
}

}  // namespace

TheoryReport verify_theory(const TheorySettings& s, std::size_t workers) {
    if (s.lemma_dim < 2) throw ConfigError("theory.lemma_dim", "must be >= 2");
    if (s.lemma_trials < 1) throw ConfigError("theory.lemma_trials", "must be >= 1");
    if (!(s.lemma_tolerance > 0.0)) throw ConfigError("theory.lemma_tolerance", "must be > 0");
    const auto d = static_cast<Eigen::Index>(s.lemma_dim);
    const double dd = static_cast<double>(d);
    const std::uint64_t seed = s.convergence.seed;

    TheoryReport rep;
    auto add_case = [&](std::string name, const Eigen::MatrixXd& cov, std::optional<double> expected, std::uint64_t mc_seed) {
        LemmaCase c;
        c.name = std::move(name);
        const auto chk = verify_lemma2(cov, s.lemma_trials, mc_seed, workers);
        c.analytic = chk.analytic;
        c.empirical = chk.empirical;
        c.matrix_algebra = explicit_projected_trace(cov);
        c.expected = expected;
        const double scale = std::max(1.0, cov.trace());
        bool ok = std::abs(c.analytic - c.matrix_algebra) <= 1e-10 * scale;
        if (expected) ok = ok && std::abs(c.analytic - *expected) <= 1e-10 * scale;
        if (std::abs(c.analytic) <= 1e-10 * scale) {
            ok = ok && std::abs(c.empirical) <= 1e-10 * scale;
        } else {
            ok = ok && std::abs(c.empirical - c.analytic) <= s.lemma_tolerance * std::abs(c.analytic);
        }
        c.ok = ok;
        rep.lemma.push_back(std::move(c));
    };

    add_case("isotropic", Eigen::MatrixXd::Identity(d, d) * s.lemma_sigma_sq, (dd - 1.0) * s.lemma_sigma_sq, seed);
    add_case("mean_direction", Eigen::MatrixXd::Constant(d, d, s.lemma_sigma_sq), 0.0, seed + 1);
    for (std::size_t i = 0; i < s.lemma_random_cases; ++i) {
        Rng rng = make_stream({seed, stream_tag::kTheory, 0xC0u, i});
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::MatrixXd a(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index c = 0; c < d; ++c) a(r, c) = normal(rng);
        }
        // Add a shared component so the mean direction carries energy.
        const double shared = normal(rng);
        a.row(0).array() += shared * 2.0;
        const Eigen::MatrixXd cov = (a * a.transpose()) / dd;
        add_case("random_psd_" + std::to_string(i + 1), 0.5 * (cov + cov.transpose()), std::nullopt, seed + 2 + i);
    }

    rep.convergence = verify_convergence(s.convergence);
    const auto& k = rep.convergence.constants;
    rep.constants_ordered = k.c_zmg <= k.c_fedavg_analog;
    rep.ok = rep.convergence.bound_satisfied && rep.constants_ordered &&
             std::all_of(rep.lemma.begin(), rep.lemma.end(), [](const LemmaCase& c) { return c.ok; });
    return rep;
}

void print_theory_report(const TheoryReport& r, std::ostream& os) {
    os << "projected noise variance, tr(Sigma) - 1'Sigma 1 / d\n";
    for (const auto& c : r.lemma) {
        os << "  " << c.name << ": analytic " << format_real(c.analytic) << ", matrix " << format_real(c.matrix_algebra)
           << ", monte carlo " << format_real(c.empirical);
        if (c.expected) os << ", expected " << format_real(*c.expected);
        os << (c.ok ? "  ok" : "  MISMATCH") << "\n";
    }
    const auto& v = r.convergence;
    const auto& k = v.constants;
    os << "convergence\n"
       << "  L " << format_real(k.smoothness) << ", mu " << format_real(k.strong_convexity) << ", Gamma "
       << format_real(k.heterogeneity_gap) << ", G^2 " << format_real(k.g_sq) << "\n"
       << "  beta " << format_real(k.beta) << ", gamma " << format_real(k.gamma) << ", delta " << format_real(k.delta)
       << "\n"
       << "  steps recorded " << v.delta_series.size() << ", final Delta " << format_real(v.delta_series.back().second)
       << "\n"
       << "  fitted decay exponent " << format_real(v.fitted_decay_exponent) << "\n"
       << "  max |1'(w_bar - w*)| " << format_real(v.max_mean_direction_drift) << "\n";
    if (v.bound_satisfied) {
        os << "  bound holds at every recorded step\n";
    } else {
        os << "  bound VIOLATED first at t = " << *v.first_violation << "\n";
    }
    os << "constants\n"
       << "  C (projected) " << format_real(k.c_zmg) << ", C (unprojected analog) " << format_real(k.c_fedavg_analog)
       << (r.constants_ordered ? "" : "  ORDER VIOLATED") << "\n";
}

std::string format_delta_csv(const TheoryReport& r, const std::string& hash) {
    const auto& k = r.convergence.constants;
    std::string out = "config_hash,t,delta,bound\n";
    for (const auto& [t, d] : r.convergence.delta_series) {
        out += hash + "," + std::to_string(t) + "," + format_real(d) + "," +
               format_real(k.delta / (k.gamma + static_cast<double>(t))) + "\n";
    }
    return out;
}

// ---- data-report -------------------------------------------------------------

std::string data_report_csv(const Federation& fed, std::size_t classes, const std::optional<std::vector<ClientId>>& subset,
                            bool include_kl, const std::string& hash) {
    std::vector<ClientDataset> chosen;
    if (subset) {
        for (auto id : *subset) {
            const auto it = std::find_if(fed.clients.begin(), fed.clients.end(),
                                         [&](const ClientDataset& c) { return c.client_id == id; });
            if (it == fed.clients.end()) throw ConfigError("clients", "unknown client id " + std::to_string(id));
            chosen.push_back(*it);
        }
    } else {
        chosen = fed.clients;
    }
    const auto rep = heterogeneity_report(chosen, classes, include_kl);
    std::string out =
        "config_hash,client_id,volume,label_diversity,normalized_entropy,gini,kl_divergence,dominant_class_fraction\n";
    for (const auto& c : rep.per_client) {
        out += hash + "," + std::to_string(c.client_id) + "," + std::to_string(c.volume) + "," +
               std::to_string(c.label_diversity) + "," + format_real(c.normalized_entropy) + "," + format_real(c.gini) +
               "," + (c.kl_divergence ? format_real(*c.kl_divergence) : std::string()) + "," +
               format_real(c.dominant_class_fraction) + "\n";
    }
    auto summary_row = [&](const char* label, auto pick) {
        out += hash + "," + label + "," + format_real(pick(rep.volume)) + "," + format_real(pick(rep.label_diversity)) +
               "," + format_real(pick(rep.normalized_entropy)) + "," + format_real(pick(rep.gini)) + "," +
               (rep.kl_divergence ? format_real(pick(*rep.kl_divergence)) : std::string()) + "," +
               format_real(pick(rep.dominant_class_fraction)) + "\n";
    };
    summary_row("mean", [](const MetricSummary& m) { return m.mean; });
    summary_row("std", [](const MetricSummary& m) { return m.stddev; });
    return out;
}

}  // namespace fedzmg
