#include "fedzmg/theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <thread>

#include "fedzmg/errors.hpp"
#include "fedzmg/models.hpp"
#include "fedzmg/rng.hpp"
#include "fedzmg/zmg.hpp"

namespace fedzmg {

double projected_variance(const Eigen::MatrixXd& covariance) {
    if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
        throw DimensionError("projected_variance: covariance must be square and non-empty");
    }
    const double d = static_cast<double>(covariance.rows());
    return covariance.trace() - covariance.sum() / d;
}

Lemma2Check verify_lemma2(const Eigen::MatrixXd& covariance, std::size_t trials, std::uint64_t seed,
                          std::size_t workers) {
    if (trials == 0) throw DimensionError("verify_lemma2: trials must be >= 1");
    const Eigen::Index d = covariance.rows();
    if (d == 0 || covariance.cols() != d) throw DimensionError("verify_lemma2: covariance must be square");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw NumericError("verify_lemma2: covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-10 * scale) {
        throw NumericError("verify_lemma2: covariance is not positive semidefinite (smallest eigenvalue " +
                           std::to_string(es.eigenvalues().minCoeff()) + ")");
    }
    // Symmetric square-root factor; unlike Cholesky it tolerates singular
    // covariances such as the rank-one mean direction.
    const Eigen::MatrixXd factor =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (trials + kChunk - 1) / kChunk;
    std::vector<double> sums(chunks, 0.0);

    auto run_chunk = [&](std::size_t c) {
        Rng rng = make_stream({seed, stream_tag::kMonteCarlo, c});
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd z(d);
        Eigen::VectorXd e(d);
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(trials, begin + kChunk);
        double s = 0.0;
        for (std::size_t t = begin; t < end; ++t) {
            for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
            e.noalias() = factor * z;
            e.array() -= e.mean();
            s += e.squaredNorm();
        }
        sums[c] = s;
    };

    const std::size_t w = std::max<std::size_t>(1, std::min(workers, chunks));
    if (w == 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < w; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t c = t; c < chunks; c += w) run_chunk(c);
            });
        }
    }
    double total = 0.0;
    for (double s : sums) total += s;
    return {projected_variance(covariance), total / static_cast<double>(trials)};
}

TheoryFederation make_theory_federation(const TheoryConfig& cfg) {
    if (cfg.recipe.task != TaskKind::Regression) {
        throw ConfigError("theory.task", "the convergence harness needs a regression federation");
    }
    TheoryFederation fed;
    fed.clients = generate_federation(cfg.recipe);
    if (cfg.identical_clients) {
        for (auto& c : fed.clients) {
            c.features = fed.clients.front().features;
            c.labels = fed.clients.front().labels;
        }
    }
    std::vector<ClientId> ids;
    std::vector<std::size_t> counts;
    for (const auto& c : fed.clients) {
        ids.push_back(c.client_id);
        counts.push_back(c.num_samples());
    }
    fed.weights = AggregationWeights::from_sample_counts(ids, counts);

    auto opt = quadratic_optimum(fed.clients, fed.weights);
    const double c = compensated_mean(opt.w_star.values());
    for (auto& client : fed.clients) client.labels -= c * client.features.rowwise().sum();
    opt = quadratic_optimum(fed.clients, fed.weights);

    fed.w_star = std::move(opt.w_star);
    fed.f_star = opt.f_star;
    fed.heterogeneity_gap = std::max(0.0, opt.heterogeneity_gap);
    return fed;
}

Eigen::MatrixXd gradient_covariance(const ClientDataset& client, const ParamSet& w, std::size_t batch_size) {
    const Eigen::Index d = client.features.cols();
    if (batch_size == 0) return Eigen::MatrixXd::Zero(d, d);
    const Eigen::Map<const Eigen::VectorXd> wv(w.values().data(), d);
    const Eigen::VectorXd r = client.features * wv - client.labels;
    // Row i of `grads` is the per-sample gradient x_i (x_i . w - y_i).
    Matrix grads = client.features.array().colwise() * r.array();
    const Eigen::RowVectorXd mean = grads.colwise().mean();
    grads.rowwise() -= mean;
    const double n = static_cast<double>(client.num_samples());
    return (grads.transpose() * grads) / (n * static_cast<double>(batch_size));
}

ClientNoise noise_terms(const Eigen::MatrixXd& covariance) {
    const double d = static_cast<double>(covariance.rows());
    return {covariance.trace(), covariance.sum() / d};
}

namespace {

double variance_sum(const ConstantInputs& in, bool reduced) {
    if (in.p.size() != in.noise.size()) throw DimensionError("constant inputs: weights and noise terms differ in size");
    double s = 0.0;
    for (std::size_t k = 0; k < in.p.size(); ++k) {
        const double v = reduced ? in.noise[k].trace - in.noise[k].mean_direction_energy : in.noise[k].trace;
        s += in.p[k] * in.p[k] * v;
    }
    return s;
}

double shared_terms(const ConstantInputs& in) {
    const double e1 = static_cast<double>(in.epochs) - 1.0;
    return 6.0 * in.smoothness * in.heterogeneity_gap + 8.0 * e1 * e1 * in.g_sq;
}

double max_sample_grad_sq(const std::vector<ClientDataset>& clients, const ParamSet& w) {
    double best = 0.0;
    for (const auto& c : clients) {
        const Eigen::Map<const Eigen::VectorXd> wv(w.values().data(), c.features.cols());
        const Eigen::VectorXd r = c.features * wv - c.labels;
        const Eigen::VectorXd row_sq = c.features.rowwise().squaredNorm();
        best = std::max(best, (row_sq.array() * r.array().square()).maxCoeff());
    }
    return best;
}

struct Harness {
    TheoryFederation fed;
    ParamSet w0;
    TheoryConstants constants;
};

Harness prepare(const TheoryConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("theory.epochs", "must be >= 1");
    if (cfg.steps < 1) throw ConfigError("theory.steps", "must be >= 1");
    if (cfg.record_every < 1) throw ConfigError("theory.record_every", "must be >= 1");
    if (!(cfg.g_safety_factor >= 1.0)) throw ConfigError("theory.g_safety_factor", "must be >= 1");

    Harness h;
    h.fed = make_theory_federation(cfg);
    const auto d = static_cast<std::size_t>(h.fed.clients.front().features.cols());
    h.w0 = ParamSet::zeros_like(ModelSpec::linear_regression(d).layouts());

    auto& k = h.constants;
    k.smoothness = 0.0;
    k.strong_convexity = std::numeric_limits<double>::infinity();
    for (const auto& c : h.fed.clients) {
        const auto cb = quadratic_curvature(c.features);
        k.smoothness = std::max(k.smoothness, cb.smoothness);
        k.strong_convexity = std::min(k.strong_convexity, cb.strong_convexity);
    }
    if (!(k.strong_convexity > 0.0)) {
        throw ConfigError("theory.samples_min", "some client objective is not strongly convex (mu = " +
                                                    std::to_string(k.strong_convexity) + ")");
    }
    const double mu = k.strong_convexity;
    const double lip = k.smoothness;
    const auto e = static_cast<double>(cfg.epochs);

    k.beta = cfg.beta.value_or(2.0 / mu);
    k.gamma = cfg.gamma.value_or(std::max(e + 1.0, k.beta * std::max(mu, 4.0 * lip)));
    if (!(k.beta > 1.0 / mu)) {
        throw ConfigError("theory.beta", "beta = " + std::to_string(k.beta) + " must exceed 1/mu = " +
                                             std::to_string(1.0 / mu));
    }
    if (!(k.gamma > e)) {
        throw ConfigError("theory.gamma", "gamma = " + std::to_string(k.gamma) + " must exceed E = " +
                                              std::to_string(cfg.epochs));
    }
    const double n0 = k.beta / k.gamma;
    const double n0_max = std::min(1.0 / mu, 1.0 / (4.0 * lip));
    if (n0 > n0_max * (1.0 + 1e-12)) {
        throw ConfigError("theory.beta, theory.gamma", "initial step beta/gamma = " + std::to_string(n0) +
                                                           " exceeds min(1/mu, 1/(4L)) = " + std::to_string(n0_max));
    }

    k.heterogeneity_gap = h.fed.heterogeneity_gap;
    k.g_sq = cfg.g_safety_factor *
             std::max(max_sample_grad_sq(h.fed.clients, h.w0), max_sample_grad_sq(h.fed.clients, h.fed.w_star));

    ConstantInputs in;
    in.smoothness = lip;
    in.heterogeneity_gap = k.heterogeneity_gap;
    in.g_sq = k.g_sq;
    in.epochs = cfg.epochs;
    for (const auto& c : h.fed.clients) {
        // The variance bound must hold along the whole trajectory; take the worse of
        // the start point and the optimum for each term.
        const auto n_start = noise_terms(gradient_covariance(c, h.w0, cfg.batch_size));
        const auto n_opt = noise_terms(gradient_covariance(c, h.fed.w_star, cfg.batch_size));
        const double trace = std::max(n_start.trace, n_opt.trace);
        const double reduced = std::max(n_start.trace - n_start.mean_direction_energy,
                                        n_opt.trace - n_opt.mean_direction_energy);
        in.p.push_back(h.fed.weights.weight_of(c.client_id));
        in.noise.push_back({trace, trace - reduced});
        k.sigma_sq.push_back(trace);
        k.mean_direction_energy.push_back(trace - reduced);
    }
    k.c_zmg = zmg_constant(in);
    k.c_fedavg_analog = fedavg_analog_constant(in);

    const double delta0 = squared_distance(h.w0.values(), h.fed.w_star.values());
    k.delta = std::max(k.beta * k.beta * k.c_zmg / (k.beta * mu - 1.0), k.gamma * delta0);
    return h;
}

}  // namespace

double zmg_constant(const ConstantInputs& in) { return shared_terms(in) + variance_sum(in, true); }

double fedavg_analog_constant(const ConstantInputs& in) { return shared_terms(in) + variance_sum(in, false); }

double fit_log_log_slope(const std::vector<std::pair<std::size_t, double>>& series, std::size_t from,
                         std::size_t to) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (const auto& [t, y] : series) {
        if (t < from || t > to || t == 0 || !(y > 0.0)) continue;
        const double lx = std::log(static_cast<double>(t));
        const double ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) throw SeriesError("fit_log_log_slope: fewer than two points in the fit window");
    const double nn = static_cast<double>(n);
    const double denom = nn * sxx - sx * sx;
    if (!(denom > 0.0)) throw SeriesError("fit_log_log_slope: degenerate fit window");
    return (nn * sxy - sx * sy) / denom;
}

ConvergenceCheck verify_convergence(const TheoryConfig& cfg) {
    Harness h = prepare(cfg);
    const auto& k = h.constants;
    const auto& clients = h.fed.clients;
    const std::size_t num = clients.size();
    const Eigen::Index d = clients.front().features.cols();
    const Eigen::Map<const Eigen::VectorXd> w_star(h.fed.w_star.values().data(), d);

    std::vector<double> p(num);
    for (std::size_t i = 0; i < num; ++i) p[i] = h.fed.weights.weight_of(clients[i].client_id);

    std::vector<Eigen::VectorXd> w(num, Eigen::VectorXd::Zero(d));
    Eigen::VectorXd w_bar = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd g(d);

    ConvergenceCheck out;
    out.constants = k;

    auto record = [&](std::size_t t) {
        const double delta = (w_bar - w_star).squaredNorm();
        out.delta_series.emplace_back(t, delta);
        out.max_mean_direction_drift = std::max(out.max_mean_direction_drift, std::abs((w_bar - w_star).sum()));
        if (!out.first_violation && delta > k.delta / (k.gamma + static_cast<double>(t))) out.first_violation = t;
    };
    record(0);

    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const double lr = k.beta / (static_cast<double>(t) + k.gamma);
        for (std::size_t i = 0; i < num; ++i) {
            const auto& c = clients[i];
            const auto n = static_cast<Eigen::Index>(c.num_samples());
            if (cfg.batch_size == 0) {
                g.noalias() = c.features.transpose() * (c.features * w[i] - c.labels) / static_cast<double>(n);
            } else {
                Rng rng = make_stream({cfg.seed, stream_tag::kTheory, t, i});
                std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
                g.setZero();
                for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                    const Eigen::Index row = pick(rng);
                    const double r = c.features.row(row).dot(w[i]) - c.labels[row];
                    g.noalias() += r * c.features.row(row).transpose();
                }
                g /= static_cast<double>(cfg.batch_size);
            }
            out.max_observed_grad_sq = std::max(out.max_observed_grad_sq, g.squaredNorm());
            g.array() -= g.mean();
            w[i] -= lr * g;
        }
        w_bar.setZero();
        for (std::size_t i = 0; i < num; ++i) w_bar += p[i] * w[i];
        if ((t + 1) % cfg.epochs == 0) {
            for (auto& wi : w) wi = w_bar;
        }
        if ((t + 1) % cfg.record_every == 0 || t + 1 == cfg.steps) record(t + 1);
    }

    out.bound_satisfied = !out.first_violation.has_value();
    const std::size_t to = std::min(cfg.fit_to, cfg.steps);
    if (cfg.fit_from < to) out.fitted_decay_exponent = fit_log_log_slope(out.delta_series, cfg.fit_from, to);
    return out;
}

ConstantComparison compare_constants(const TheoryConfig& cfg) {
    Harness h = prepare(cfg);
    return {h.constants.c_zmg, h.constants.c_fedavg_analog, h.constants};
}

}  // namespace fedzmg
