#include "fedzmg/engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedzmg/rng.hpp"

namespace fedzmg {

const char* to_string(Algorithm a) noexcept {
    switch (a) {
        case Algorithm::FedAvg: return "fedavg";
        case Algorithm::FedZmg: return "fedzmg";
        case Algorithm::FedAdam: return "fedadam";
    }
    return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
    if (name == "fedavg") return Algorithm::FedAvg;
    if (name == "fedzmg") return Algorithm::FedZmg;
    if (name == "fedadam") return Algorithm::FedAdam;
    throw ConfigError("experiment.algorithms", "unknown algorithm '" + name + "'");
}

double LrSchedule::at(double base_lr, std::size_t global_step) const noexcept {
    if (kind == Kind::Constant) return base_lr;
    return beta / (static_cast<double>(global_step) + gamma);
}

void ExperimentConfig::validate(std::size_t num_clients) const {
    model.validate();
    if (cohort < 1) throw ConfigError("experiment.cohort", "must be >= 1");
    if (cohort > num_clients) {
        throw ConfigError("experiment.cohort, data.clients",
                          "cohort size C=" + std::to_string(cohort) + " exceeds client count K=" +
                              std::to_string(num_clients));
    }
    if (epochs < 1) throw ConfigError("experiment.epochs", "must be >= 1");
    if (rounds < 1) throw ConfigError("experiment.rounds", "must be >= 1");
    if (batch_size < 1) throw ConfigError("experiment.batch_size", "must be >= 1");
    if (eval_every < 1) throw ConfigError("experiment.eval_every", "must be >= 1");
    if (workers < 1) throw ConfigError("experiment.workers", "must be >= 1");
    if (!(client_lr >= 0.0) || !std::isfinite(client_lr)) throw ConfigError("optim.client_lr", "must be >= 0");
    if (!(server_lr > 0.0) || !std::isfinite(server_lr)) throw ConfigError("optim.server_lr", "must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay", "must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim.momentum", "must lie in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("optim.adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("optim.adam_beta2", "must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("optim.adam_eps", "must be > 0");
    if (lr_schedule.kind == LrSchedule::Kind::Inverse) {
        if (!(lr_schedule.beta > 0.0)) throw ConfigError("optim.lr_beta", "must be > 0");
        if (!(lr_schedule.gamma > 0.0)) throw ConfigError("optim.lr_gamma", "must be > 0");
    }
    if (!(divergence_threshold > 0.0)) throw ConfigError("experiment.divergence_threshold", "must be > 0");
}

Federation load_federation(const ExperimentConfig& cfg) {
    Federation fed;
    if (cfg.fixture) {
        auto imported = import_federation(*cfg.fixture);
        fed.clients = std::move(imported.clients);
        if (imported.eval) {
            fed.eval = std::move(*imported.eval);
        } else {
            Eigen::Index rows = 0;
            for (const auto& c : fed.clients) rows += c.features.rows();
            fed.eval.features.resize(rows, fed.clients.front().features.cols());
            fed.eval.labels.resize(rows);
            Eigen::Index at = 0;
            for (const auto& c : fed.clients) {
                fed.eval.features.middleRows(at, c.features.rows()) = c.features;
                fed.eval.labels.segment(at, c.labels.size()) = c.labels;
                at += c.features.rows();
            }
        }
    } else {
        fed.clients = generate_federation(cfg.recipe);
        fed.eval = generate_eval_set(cfg.recipe);
    }
    return fed;
}

std::vector<ClientId> sample_cohort(std::size_t num_clients, std::size_t cohort, std::size_t round,
                                    std::uint64_t seed) {
    if (cohort > num_clients) {
        throw ConfigError("experiment.cohort", "cannot sample " + std::to_string(cohort) + " of " +
                                                   std::to_string(num_clients) + " clients");
    }
    std::vector<ClientId> ids(num_clients);
    std::iota(ids.begin(), ids.end(), ClientId{0});
    Rng rng = make_stream({seed, stream_tag::kCohort, round});
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < cohort; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(cohort);
    std::sort(ids.begin(), ids.end());
    return ids;
}

LocalResult local_train(const ClientDataset& client, const ParamSet& w_init, const ExperimentConfig& cfg,
                        std::size_t round) {
    const std::size_t n = client.num_samples();
    if (n == 0) throw DimensionError("client " + std::to_string(client.client_id) + " holds no samples");
    if (w_init.layouts() != cfg.model.layouts()) throw LayoutError("local_train: initial parameters do not match model");

    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    const std::size_t steps_per_round = steps_per_epoch * cfg.epochs;
    const std::size_t step_base = (round > 0 ? round - 1 : 0) * steps_per_round;

    LocalResult out{w_init, 0.0, 0};
    ClientOptState state = ClientOptState::fresh(w_init);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Batch mb;
    double loss_sum = 0.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = make_stream({cfg.seed, stream_tag::kShuffle, round, client.client_id, epoch});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            mb.features.resize(static_cast<Eigen::Index>(len), client.features.cols());
            mb.labels.resize(static_cast<Eigen::Index>(len));
            for (std::size_t i = 0; i < len; ++i) {
                const auto src = static_cast<Eigen::Index>(order[start + i]);
                mb.features.row(static_cast<Eigen::Index>(i)) = client.features.row(src);
                mb.labels[static_cast<Eigen::Index>(i)] = client.labels[src];
            }

            auto lg = loss_and_grad(cfg.model, out.weights, mb);
            if (!std::isfinite(lg.loss) || lg.loss > cfg.divergence_threshold) {
                throw DivergenceError("divergence: loss " + std::to_string(lg.loss) + " at round " +
                                          std::to_string(round) + ", client " + std::to_string(client.client_id) +
                                          ", step " + std::to_string(out.steps),
                                      round, client.client_id, out.steps);
            }
            loss_sum += lg.loss;

            const double lr = cfg.lr_schedule.at(cfg.client_lr, step_base + out.steps);
            if (cfg.algorithm == Algorithm::FedZmg) {
                client_step(out.weights, lg.grad, state,
                            {lr, cfg.weight_decay, cfg.momentum, true, cfg.momentum_placement});
            } else {
                sgd_step_inplace(out.weights, lg.grad, lr);
            }
            ++out.steps;
        }
    }
    out.mean_loss = loss_sum / static_cast<double>(out.steps);
    return out;
}

EngineState EngineState::initial(const ExperimentConfig& cfg, std::optional<ParamSet> init) {
    EngineState s;
    if (init) {
        if (init->layouts() != cfg.model.layouts()) throw LayoutError("initial parameters do not match the model");
        s.global = std::move(*init);
    } else {
        s.global = init_params(cfg.model, cfg.seed, cfg.init);
    }
    if (cfg.algorithm == Algorithm::FedAdam) {
        s.adam = ServerAdamState::zeros(s.global.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }
    return s;
}

RoundRecord run_round(EngineState& state, const ExperimentConfig& cfg, const Federation& fed, std::size_t round) {
    const auto cohort = sample_cohort(fed.clients.size(), cfg.cohort, round, cfg.seed);
    const std::size_t c = cohort.size();

    std::vector<LocalResult> results(c);
    std::vector<Channel> down(c), up(c);
    std::vector<ParamSet> uploads(c);
    std::vector<std::exception_ptr> errors(c);

    auto work = [&](std::size_t i) {
        try {
            const ParamSet local_init = down[i].transmit(state.global);
            results[i] = local_train(fed.clients[cohort[i]], local_init, cfg, round);
            uploads[i] = up[i].transmit(results[i].weights);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const std::size_t workers = std::min(cfg.workers, c);
    if (workers <= 1) {
        for (std::size_t i = 0; i < c; ++i) work(i);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < c; i += workers) work(i);
            });
        }
    }
    // Rethrow in cohort order so the reported failure is schedule-independent.
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::vector<std::size_t> counts(c);
    for (std::size_t i = 0; i < c; ++i) counts[i] = fed.clients[cohort[i]].num_samples();
    const auto weights = AggregationWeights::from_sample_counts(cohort, counts);
    ParamSet avg = weighted_average(uploads, cohort, weights);

    if (cfg.algorithm == Algorithm::FedAdam) {
        adam_server_step_inplace(state.global, pseudo_gradient(state.global, avg), *state.adam, cfg.server_lr);
    } else if (cfg.server_lr == 1.0) {
        state.global = std::move(avg);
    } else {
        const ParamSet delta = pseudo_gradient(state.global, avg);
        sgd_step_inplace(state.global, delta, cfg.server_lr);
    }
    for (double v : state.global.values()) {
        if (!std::isfinite(v)) {
            throw DivergenceError("divergence: non-finite global parameters after round " + std::to_string(round), round,
                                  std::nullopt, std::nullopt);
        }
    }
    state.completed_rounds = round;

    RoundRecord rec;
    rec.round = round;
    rec.cohort = cohort;
    rec.global_param_checksum = state.global.checksum();
    for (std::size_t i = 0; i < c; ++i) {
        rec.train_loss += weights.weight_of(cohort[i]) * results[i].mean_loss;
        rec.values_down.push_back(down[i].values());
        rec.values_up.push_back(up[i].values());
    }
    if (round % cfg.eval_every == 0) {
        const double vl = loss(cfg.model, state.global, fed.eval);
        if (!std::isfinite(vl) || vl > cfg.divergence_threshold) {
            throw DivergenceError("divergence: evaluation loss " + std::to_string(vl) + " after round " +
                                      std::to_string(round),
                                  round, std::nullopt, std::nullopt);
        }
        rec.val_loss = vl;
        if (cfg.model.is_classifier()) rec.val_accuracy = accuracy(cfg.model, state.global, fed.eval);
    }
    return rec;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Federation& fed, const RoundSink& sink,
                                std::optional<ParamSet> init) {
    cfg.validate(fed.clients.size());
    for (std::size_t i = 0; i < fed.clients.size(); ++i) {
        if (fed.clients[i].client_id != i) throw ConfigError("data", "client ids must be 0..K-1 in order");
    }
    EngineState state = EngineState::initial(cfg, std::move(init));
    ExperimentResult result;
    result.rounds.reserve(cfg.rounds);
    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        try {
            result.rounds.push_back(run_round(state, cfg, fed, r));
        } catch (DivergenceError& e) {
            e.set_partial_series(result.rounds);
            throw;
        }
        if (sink) sink(result.rounds.back());
    }
    result.final_global = std::move(state.global);
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundSink& sink) {
    return run_experiment(cfg, load_federation(cfg), sink);
}

}  // namespace fedzmg
