#include "fedzmg/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fedzmg/errors.hpp"
#include "fedzmg/io.hpp"
#include "fedzmg/param_set.hpp"

namespace fedzmg {

std::vector<IniSection> parse_ini(const std::string& text) {
    std::vector<IniSection> sections;
    std::set<std::string> seen_sections;
    std::set<std::string> seen_keys;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto cut = raw.find_first_of("#;");
        const std::string line = io::trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where, "unterminated section header '" + line + "'");
            const std::string name = io::trim(line.substr(1, line.size() - 2));
            if (name.empty()) throw ConfigError(where, "empty section name");
            if (!seen_sections.insert(name).second) throw ConfigError(name, "section appears more than once");
            sections.push_back({name, {}});
            seen_keys.clear();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where, "expected 'key = value', got '" + line + "'");
        if (sections.empty()) throw ConfigError(where, "key outside of any section");
        const std::string key = io::trim(line.substr(0, eq));
        const std::string value = io::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(where, "empty key");
        auto& sec = sections.back();
        if (!seen_keys.insert(key).second) throw ConfigError(sec.name + "." + key, "key appears more than once");
        sec.entries.push_back({key, value, line_no});
    }
    return sections;
}

namespace {

double to_real(const IniEntry& e, const std::string& path) {
    try {
        return io::parse_real(e.value, path);
    } catch (const IoError&) {
        throw ConfigError(path, "expected a number, got '" + e.value + "'");
    }
}

std::uint64_t to_uint(const IniEntry& e, const std::string& path) {
    try {
        return io::parse_uint(e.value, path);
    } catch (const IoError&) {
        throw ConfigError(path, "expected a non-negative integer, got '" + e.value + "'");
    }
}

bool to_bool(const IniEntry& e, const std::string& path) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    throw ConfigError(path, "expected true or false, got '" + e.value + "'");
}

std::vector<std::string> to_list(const IniEntry& e, const std::string& path) {
    std::vector<std::string> out;
    for (auto& item : io::split(e.value, ',')) {
        auto t = io::trim(item);
        if (t.empty()) throw ConfigError(path, "empty list element in '" + e.value + "'");
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<double> to_real_list(const IniEntry& e, const std::string& path) {
    std::vector<double> out;
    for (const auto& item : to_list(e, path)) out.push_back(to_real({e.key, item, e.line}, path));
    return out;
}

TaskKind parse_task(const std::string& s) {
    if (s == "classification") return TaskKind::Classification;
    if (s == "regression") return TaskKind::Regression;
    throw ConfigError("data.task", "unknown task '" + s + "' (classification, regression)");
}

const char* task_name(TaskKind t) { return t == TaskKind::Regression ? "regression" : "classification"; }

MomentumPlacement parse_placement(const std::string& s, const std::string& path) {
    if (s == "project_first") return MomentumPlacement::ProjectFirst;
    if (s == "project_buffer") return MomentumPlacement::ProjectBuffer;
    throw ConfigError(path, "unknown placement '" + s + "' (project_first, project_buffer)");
}

const char* placement_name(MomentumPlacement p) {
    return p == MomentumPlacement::ProjectBuffer ? "project_buffer" : "project_first";
}

// Dispatches each entry of a section to a setter; unknown keys are errors.
template <class Fn>
void each_entry(const IniSection& sec, Fn&& fn) {
    for (const auto& e : sec.entries) {
        const std::string path = sec.name + "." + e.key;
        if (!fn(e, path)) throw ConfigError(path, "unknown field");
    }
}

void apply_experiment(const IniSection& sec, RunConfig& rc) {
    auto& b = rc.base;
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "algorithms") {
            rc.algorithms.clear();
            for (const auto& a : to_list(e, path)) {
                const auto alg = parse_algorithm(a);
                if (std::find(rc.algorithms.begin(), rc.algorithms.end(), alg) != rc.algorithms.end()) {
                    throw ConfigError(path, "algorithm '" + a + "' listed twice");
                }
                rc.algorithms.push_back(alg);
            }
        } else if (e.key == "seeds") {
            rc.seeds.clear();
            for (const auto& s : to_list(e, path)) rc.seeds.push_back(to_uint({e.key, s, e.line}, path));
            std::set<std::uint64_t> uniq(rc.seeds.begin(), rc.seeds.end());
            if (uniq.size() != rc.seeds.size()) throw ConfigError(path, "duplicate seed");
        } else if (e.key == "rounds") {
            b.rounds = to_uint(e, path);
        } else if (e.key == "cohort") {
            b.cohort = to_uint(e, path);
        } else if (e.key == "epochs") {
            b.epochs = to_uint(e, path);
        } else if (e.key == "batch_size") {
            b.batch_size = to_uint(e, path);
        } else if (e.key == "eval_every") {
            b.eval_every = to_uint(e, path);
        } else if (e.key == "workers") {
            b.workers = to_uint(e, path);
        } else if (e.key == "divergence_threshold") {
            b.divergence_threshold = to_real(e, path);
        } else {
            return false;
        }
        return true;
    });
}

void apply_model(const IniSection& sec, ExperimentConfig& b) {
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "kind") {
            b.model.kind = parse_model_kind(e.value);
        } else if (e.key == "hidden") {
            b.model.hidden = to_uint(e, path);
        } else if (e.key == "init") {
            b.init = parse_init_scheme(e.value);
        } else {
            return false;
        }
        return true;
    });
}

bool apply_recipe_key(const IniEntry& e, const std::string& path, DataRecipe& r) {
    if (e.key == "task") {
        r.task = parse_task(e.value);
    } else if (e.key == "clients") {
        r.num_clients = to_uint(e, path);
    } else if (e.key == "classes") {
        r.classes = to_uint(e, path);
    } else if (e.key == "input_dim") {
        r.input_dim = to_uint(e, path);
    } else if (e.key == "samples_min") {
        r.samples_min = to_uint(e, path);
    } else if (e.key == "samples_max") {
        r.samples_max = to_uint(e, path);
    } else if (e.key == "dirichlet_alpha") {
        r.dirichlet_alpha = to_real(e, path);
    } else if (e.key == "bias_shift_scale") {
        r.bias_shift_scale = to_real(e, path);
    } else if (e.key == "noise_scale") {
        r.noise_scale = to_real(e, path);
    } else if (e.key == "seed") {
        r.seed = to_uint(e, path);
    } else {
        return false;
    }
    return true;
}

void apply_data(const IniSection& sec, ExperimentConfig& b, const std::filesystem::path& base_dir) {
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "fixture") {
            if (e.value.empty()) throw ConfigError(path, "empty path");
            std::filesystem::path p(e.value);
            b.fixture = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
            return true;
        }
        return apply_recipe_key(e, path, b.recipe);
    });
}

void apply_optim(const IniSection& sec, ExperimentConfig& b) {
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "client_lr") {
            b.client_lr = to_real(e, path);
        } else if (e.key == "server_lr") {
            b.server_lr = to_real(e, path);
        } else if (e.key == "weight_decay") {
            b.weight_decay = to_real(e, path);
        } else if (e.key == "momentum") {
            b.momentum = to_real(e, path);
        } else if (e.key == "momentum_placement") {
            b.momentum_placement = parse_placement(e.value, path);
        } else if (e.key == "adam_beta1") {
            b.adam_beta1 = to_real(e, path);
        } else if (e.key == "adam_beta2") {
            b.adam_beta2 = to_real(e, path);
        } else if (e.key == "adam_eps") {
            b.adam_eps = to_real(e, path);
        } else if (e.key == "lr_schedule") {
            if (e.value == "constant") {
                b.lr_schedule.kind = LrSchedule::Kind::Constant;
            } else if (e.value == "inverse") {
                b.lr_schedule.kind = LrSchedule::Kind::Inverse;
            } else {
                throw ConfigError(path, "unknown schedule '" + e.value + "' (constant, inverse)");
            }
        } else if (e.key == "lr_beta") {
            b.lr_schedule.beta = to_real(e, path);
        } else if (e.key == "lr_gamma") {
            b.lr_schedule.gamma = to_real(e, path);
        } else {
            return false;
        }
        return true;
    });
}

void apply_grid(const IniSection& sec, GridSearchSpec& g) {
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "algorithm") {
            g.algorithm = parse_algorithm(e.value);
        } else if (e.key == "client_lrs") {
            g.client_lrs = to_real_list(e, path);
        } else if (e.key == "server_lrs") {
            g.server_lrs = to_real_list(e, path);
        } else if (e.key == "rounds") {
            g.rounds = to_uint(e, path);
        } else if (e.key == "selection_window") {
            g.selection_window = to_uint(e, path);
        } else if (e.key == "cohort") {
            g.cohort = to_uint(e, path);
        } else if (e.key == "epochs") {
            g.epochs = to_uint(e, path);
        } else {
            return false;
        }
        return true;
    });
}

void apply_theory(const IniSection& sec, TheorySettings& t) {
    auto& c = t.convergence;
    each_entry(sec, [&](const IniEntry& e, const std::string& path) {
        if (e.key == "identical_clients") {
            c.identical_clients = to_bool(e, path);
        } else if (e.key == "epochs") {
            c.epochs = to_uint(e, path);
        } else if (e.key == "batch_size") {
            c.batch_size = to_uint(e, path);
        } else if (e.key == "steps") {
            c.steps = to_uint(e, path);
        } else if (e.key == "beta") {
            c.beta = to_real(e, path);
        } else if (e.key == "gamma") {
            c.gamma = to_real(e, path);
        } else if (e.key == "record_every") {
            c.record_every = to_uint(e, path);
        } else if (e.key == "fit_from") {
            c.fit_from = to_uint(e, path);
        } else if (e.key == "fit_to") {
            c.fit_to = to_uint(e, path);
        } else if (e.key == "seed") {
            c.seed = to_uint(e, path);
        } else if (e.key == "g_safety_factor") {
            c.g_safety_factor = to_real(e, path);
        } else if (e.key == "lemma_trials") {
            t.lemma_trials = to_uint(e, path);
        } else if (e.key == "lemma_dim") {
            t.lemma_dim = to_uint(e, path);
        } else if (e.key == "lemma_random_cases") {
            t.lemma_random_cases = to_uint(e, path);
        } else if (e.key == "lemma_sigma_sq") {
            t.lemma_sigma_sq = to_real(e, path);
        } else if (e.key == "lemma_tolerance") {
            t.lemma_tolerance = to_real(e, path);
        } else if (e.key.rfind("data_", 0) == 0) {
            return apply_recipe_key({e.key.substr(5), e.value, e.line}, path, c.recipe);
        } else {
            return false;
        }
        return true;
    });
}

void finish_model(ExperimentConfig& c) {
    const bool regression = c.recipe.task == TaskKind::Regression;
    if (regression != (c.model.kind == ModelKind::LinearRegression)) {
        throw ConfigError("model.kind, data.task", std::string("model '") + to_string(c.model.kind) +
                                                       "' does not fit task '" + task_name(c.recipe.task) + "'");
    }
    c.model.input_dim = c.recipe.input_dim;
    c.model.classes = regression ? 1 : c.recipe.classes;
    if (c.model.kind != ModelKind::Mlp && c.model.hidden != 0) {
        throw ConfigError("model.hidden", "only the mlp model has a hidden layer");
    }
}

}  // namespace

std::vector<double> GridSearchSpec::default_grid_values() {
    std::vector<double> v(9);
    for (int i = 0; i < 9; ++i) v[static_cast<std::size_t>(i)] = std::pow(10.0, -3.0 + 0.5 * i);
    v.front() = 1e-3;
    v.back() = 1e1;
    return v;
}

void GridSearchSpec::validate() const {
    auto check = [](const std::vector<double>& v, const char* field) {
        if (v.empty()) throw ConfigError(field, "grid axis is empty");
        for (double x : v) {
            if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(field, "learning rates must be finite and > 0");
        }
        std::set<double> uniq(v.begin(), v.end());
        if (uniq.size() != v.size()) throw ConfigError(field, "duplicate learning rate");
    };
    check(client_lrs, "grid.client_lrs");
    check(server_lrs, "grid.server_lrs");
    if (rounds < 1) throw ConfigError("grid.rounds", "must be >= 1");
    if (selection_window < 1 || selection_window > rounds) {
        throw ConfigError("grid.selection_window", "must be in [1, grid.rounds]");
    }
}

ExperimentConfig RunConfig::for_algorithm(Algorithm a) const {
    const auto it = per_algorithm.find(a);
    ExperimentConfig c = it != per_algorithm.end() ? it->second : base;
    c.algorithm = a;
    return c;
}

std::vector<ExperimentConfig> RunConfig::cells() const {
    std::vector<ExperimentConfig> out;
    for (auto a : algorithms) {
        for (auto s : seeds) {
            auto c = for_algorithm(a);
            c.seed = s;
            out.push_back(std::move(c));
        }
    }
    return out;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
    RunConfig rc;
    const auto sections = parse_ini(text);
    const IniSection* optim = nullptr;
    std::map<Algorithm, const IniSection*> overrides;
    for (const auto& sec : sections) {
        if (sec.name == "experiment") {
            apply_experiment(sec, rc);
        } else if (sec.name == "model") {
            apply_model(sec, rc.base);
        } else if (sec.name == "data") {
            apply_data(sec, rc.base, base_dir);
        } else if (sec.name == "optim") {
            optim = &sec;
        } else if (sec.name.rfind("optim.", 0) == 0) {
            Algorithm a;
            try {
                a = parse_algorithm(sec.name.substr(6));
            } catch (const ConfigError&) {
                throw ConfigError(sec.name, "unknown algorithm in section name");
            }
            overrides[a] = &sec;
        } else if (sec.name == "grid") {
            apply_grid(sec, rc.grid);
        } else if (sec.name == "theory") {
            apply_theory(sec, rc.theory);
        } else {
            throw ConfigError(sec.name, "unknown section");
        }
    }
    if (rc.algorithms.empty()) throw ConfigError("experiment.algorithms", "at least one algorithm is required");
    if (rc.seeds.empty()) throw ConfigError("experiment.seeds", "at least one seed is required");
    if (optim) apply_optim(*optim, rc.base);
    finish_model(rc.base);
    rc.base.model.validate();

    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg, Algorithm::FedAdam}) {
        ExperimentConfig c = rc.base;
        c.algorithm = a;
        if (auto it = overrides.find(a); it != overrides.end()) apply_optim(*it->second, c);
        rc.per_algorithm[a] = c;
    }
    if (!rc.base.fixture) rc.base.recipe.validate();
    for (auto a : rc.algorithms) rc.per_algorithm[a].validate(rc.base.recipe.num_clients);
    rc.grid.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const IoError& e) {
        throw ConfigError("", e.what());
    }
    return parse_run_config(text, path.parent_path());
}

std::string canonical_config_text(const ExperimentConfig& c) {
    using io::format_real;
    std::ostringstream o;
    o << "[experiment]\n"
      << "algorithms = " << to_string(c.algorithm) << "\n"
      << "seeds = " << c.seed << "\n"
      << "rounds = " << c.rounds << "\n"
      << "cohort = " << c.cohort << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "divergence_threshold = " << format_real(c.divergence_threshold) << "\n"
      << "\n[model]\n"
      << "kind = " << to_string(c.model.kind) << "\n"
      << "hidden = " << c.model.hidden << "\n"
      << "init = " << to_string(c.init) << "\n"
      << "\n[data]\n"
      << "task = " << task_name(c.recipe.task) << "\n"
      << "clients = " << c.recipe.num_clients << "\n"
      << "classes = " << c.recipe.classes << "\n"
      << "input_dim = " << c.recipe.input_dim << "\n"
      << "samples_min = " << c.recipe.samples_min << "\n"
      << "samples_max = " << c.recipe.samples_max << "\n"
      << "dirichlet_alpha = " << format_real(c.recipe.dirichlet_alpha) << "\n"
      << "bias_shift_scale = " << format_real(c.recipe.bias_shift_scale) << "\n"
      << "noise_scale = " << format_real(c.recipe.noise_scale) << "\n"
      << "seed = " << c.recipe.seed << "\n";
    if (c.fixture) o << "fixture = " << std::filesystem::absolute(*c.fixture).lexically_normal().string() << "\n";
    o << "\n[optim]\n"
      << "client_lr = " << format_real(c.client_lr) << "\n"
      << "server_lr = " << format_real(c.server_lr) << "\n"
      << "weight_decay = " << format_real(c.weight_decay) << "\n"
      << "momentum = " << format_real(c.momentum) << "\n"
      << "momentum_placement = " << placement_name(c.momentum_placement) << "\n"
      << "adam_beta1 = " << format_real(c.adam_beta1) << "\n"
      << "adam_beta2 = " << format_real(c.adam_beta2) << "\n"
      << "adam_eps = " << format_real(c.adam_eps) << "\n"
      << "lr_schedule = " << (c.lr_schedule.kind == LrSchedule::Kind::Inverse ? "inverse" : "constant") << "\n"
      << "lr_beta = " << format_real(c.lr_schedule.beta) << "\n"
      << "lr_gamma = " << format_real(c.lr_schedule.gamma) << "\n";
    return o.str();
}

std::string text_hash(const std::string& text) { return io::hex64(fnv1a(text.data(), text.size())); }

std::string config_hash(const ExperimentConfig& cfg) { return text_hash(canonical_config_text(cfg)); }

}  // namespace fedzmg
