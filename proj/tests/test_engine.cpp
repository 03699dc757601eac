#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <unistd.h>

#include "fedzmg/engine.hpp"
#include "fedzmg/errors.hpp"
#include "fedzmg/zmg.hpp"

using namespace fedzmg;

namespace {

ExperimentConfig small_config(Algorithm a) {
    ExperimentConfig c;
    c.algorithm = a;
    c.recipe.num_clients = 6;
    c.recipe.classes = 3;
    c.recipe.input_dim = 5;
    c.recipe.samples_min = 20;
    c.recipe.samples_max = 40;
    c.recipe.dirichlet_alpha = 0.5;
    c.recipe.bias_shift_scale = 2.0;
    c.recipe.seed = 3;
    c.model = ModelSpec::logistic_regression(5, 3);
    c.cohort = 3;
    c.rounds = 5;
    c.epochs = 2;
    c.batch_size = 8;
    c.client_lr = 0.05;
    c.server_lr = a == Algorithm::FedAdam ? 0.01 : 1.0;
    return c;
}

Federation regression_federation(std::size_t clients, std::size_t n, std::size_t d, std::uint64_t seed,
                                  bool zero_row_sums = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Federation fed;
    for (std::size_t k = 0; k < clients; ++k) {
        ClientDataset c{k, Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)),
                        Vector(static_cast<Eigen::Index>(n))};
        for (Eigen::Index i = 0; i < c.features.size(); ++i) c.features.data()[i] = normal(rng);
        if (zero_row_sums) {
            for (Eigen::Index r = 0; r < c.features.rows(); ++r) c.features.row(r).array() -= c.features.row(r).mean();
        }
        for (Eigen::Index i = 0; i < c.labels.size(); ++i) c.labels[i] = normal(rng) + static_cast<double>(k);
        fed.clients.push_back(std::move(c));
    }
    fed.eval = fed.clients.front().as_batch();
    return fed;
}

ExperimentConfig regression_config(Algorithm a, std::size_t d) {
    ExperimentConfig c;
    c.algorithm = a;
    c.model = ModelSpec::linear_regression(d);
    c.recipe.task = TaskKind::Regression;
    c.recipe.input_dim = d;
    c.init = InitScheme::Zeros;
    c.weight_decay = 0.0;
    c.momentum = 0.0;
    c.client_lr = 0.05;
    return c;
}

}  // namespace

TEST_CASE("sample_cohort") {
    CHECK(sample_cohort(5, 5, 1, 9) == std::vector<ClientId>{0, 1, 2, 3, 4});
    CHECK(sample_cohort(1, 1, 3, 9) == std::vector<ClientId>{0});
    const auto a = sample_cohort(50, 10, 7, 1);
    CHECK(a == sample_cohort(50, 10, 7, 1));
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<ClientId>(a.begin(), a.end()).size() == 10);
    CHECK_THROWS_AS(sample_cohort(3, 4, 1, 1), ConfigError);

    // Every client is drawn with frequency close to C / K.
    std::vector<int> hits(20, 0);
    for (std::size_t r = 1; r <= 4000; ++r) {
        for (auto id : sample_cohort(20, 5, r, 2)) ++hits[id];
    }
    for (int h : hits) CHECK(std::abs(h - 1000) < 120);
}

TEST_CASE("local_train reduces to a single full-batch sgd step") {
    const auto fed = regression_federation(1, 12, 3, 5);
    auto cfg = regression_config(Algorithm::FedAvg, 3);
    cfg.epochs = 1;
    cfg.batch_size = 12;
    ParamSet w0({0.2, -0.4, 1.0}, cfg.model.layouts());
    const auto res = local_train(fed.clients[0], w0, cfg, 1);
    const auto expect = sgd_step(w0, loss_and_grad(cfg.model, w0, fed.clients[0].as_batch()).grad, cfg.client_lr);
    CHECK(res.steps == 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(res.weights[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("zero client learning rate keeps the broadcast model") {
    const auto fed = regression_federation(1, 10, 3, 6);
    ParamSet w0({0.2, -0.4, 1.0}, ModelSpec::linear_regression(3).layouts());
    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg}) {
        auto cfg = regression_config(a, 3);
        cfg.client_lr = 0.0;
        cfg.weight_decay = 5e-4;
        cfg.momentum = 0.9;
        CHECK(local_train(fed.clients[0], w0, cfg, 1).weights == w0);
    }
}

TEST_CASE("fedzmg on a column-constant design only decays") {
    auto fed = regression_federation(1, 10, 4, 7);
    auto& c = fed.clients[0];
    for (Eigen::Index r = 0; r < c.features.rows(); ++r) c.features.row(r).setConstant(0.3 * static_cast<double>(r) - 1.0);
    auto cfg = regression_config(Algorithm::FedZmg, 4);
    cfg.weight_decay = 0.01;
    cfg.momentum = 0.9;
    cfg.client_lr = 0.1;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    ParamSet w0({1.0, -2.0, 0.5, 3.0}, cfg.model.layouts());
    const auto res = local_train(c, w0, cfg, 1);
    CHECK(res.steps == 9);
    const double factor = std::pow(1.0 - cfg.client_lr * cfg.weight_decay, 9.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(res.weights[i] == doctest::Approx(factor * w0[i]).epsilon(1e-12));
}

TEST_CASE("single-client cohort") {
    const auto fed = regression_federation(3, 10, 3, 8);
    auto cfg = regression_config(Algorithm::FedAvg, 3);
    cfg.cohort = 1;
    auto state = EngineState::initial(cfg);
    const auto w0 = state.global;
    const auto rec = run_round(state, cfg, fed, 1);
    REQUIRE(rec.cohort.size() == 1);
    const auto local = local_train(fed.clients[rec.cohort[0]], w0, cfg, 1);
    CHECK(state.global == local.weights);
}

TEST_CASE("identical clients behave like centralized training") {
    auto fed = regression_federation(4, 10, 3, 9);
    for (auto& c : fed.clients) {
        c.features = fed.clients[0].features;
        c.labels = fed.clients[0].labels;
    }
    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg, Algorithm::FedAdam}) {
        auto cfg = regression_config(a, 3);
        cfg.cohort = 4;
        cfg.batch_size = 10;  // full batch: every client takes the same steps
        cfg.server_lr = a == Algorithm::FedAdam ? 0.1 : 1.0;
        auto state = EngineState::initial(cfg);
        const auto w0 = state.global;
        run_round(state, cfg, fed, 1);
        const auto local = local_train(fed.clients[0], w0, cfg, 1);
        if (a == Algorithm::FedAdam) {
            auto adam = ServerAdamState::zeros(w0.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            const auto expect = adam_server_step(w0, pseudo_gradient(w0, local.weights), adam, cfg.server_lr).weights;
            for (std::size_t i = 0; i < 3; ++i) CHECK(state.global[i] == doctest::Approx(expect[i]).epsilon(1e-14));
        } else {
            for (std::size_t i = 0; i < 3; ++i) CHECK(state.global[i] == doctest::Approx(local.weights[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("fedadam with zero pseudo-gradient keeps the global model") {
    const auto fed = regression_federation(3, 10, 3, 10);
    auto cfg = regression_config(Algorithm::FedAdam, 3);
    cfg.client_lr = 0.0;
    cfg.cohort = 3;
    cfg.init = InitScheme::Uniform;
    auto state = EngineState::initial(cfg);
    const auto w0 = state.global;
    run_round(state, cfg, fed, 1);
    CHECK(state.global == w0);
}

TEST_CASE("fedzmg matches fedavg when gradients are already zero-mean") {
    const auto fed = regression_federation(4, 12, 5, 11, true);
    ExperimentResult r[2];
    int i = 0;
    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg}) {
        auto cfg = regression_config(a, 5);
        cfg.epochs = 1;
        cfg.cohort = 4;
        cfg.batch_size = 12;
        cfg.rounds = 10;
        r[i++] = run_experiment(cfg, fed);
    }
    for (std::size_t j = 0; j < 5; ++j) CHECK(r[0].final_global[j] == doctest::Approx(r[1].final_global[j]).epsilon(1e-12));
}

TEST_CASE("run_experiment records and determinism") {
    auto cfg = small_config(Algorithm::FedZmg);
    cfg.rounds = 1;
    CHECK(run_experiment(cfg).rounds.size() == 1);

    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg, Algorithm::FedAdam}) {
        cfg = small_config(a);
        const auto x = run_experiment(cfg);
        cfg.workers = 3;
        const auto y = run_experiment(cfg);
        REQUIRE(x.rounds.size() == y.rounds.size());
        for (std::size_t t = 0; t < x.rounds.size(); ++t) {
            CHECK(x.rounds[t].round == t + 1);
            CHECK(x.rounds[t].global_param_checksum == y.rounds[t].global_param_checksum);
            CHECK(x.rounds[t].cohort == y.rounds[t].cohort);
            CHECK(x.rounds[t].train_loss == y.rounds[t].train_loss);
            REQUIRE(x.rounds[t].val_accuracy);
            CHECK(*x.rounds[t].val_accuracy >= 0.0);
            CHECK(*x.rounds[t].val_accuracy <= 1.0);
        }
        CHECK(x.final_global == y.final_global);
    }
}

TEST_CASE("streaming sink and evaluation cadence") {
    auto cfg = small_config(Algorithm::FedAvg);
    cfg.eval_every = 2;
    std::vector<std::size_t> seen;
    const auto res = run_experiment(cfg, [&](const RoundRecord& r) { seen.push_back(r.round); });
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5});
    for (const auto& r : res.rounds) CHECK(r.val_accuracy.has_value() == (r.round % 2 == 0));
}

TEST_CASE("communication is exactly d values each way per client") {
    for (auto a : {Algorithm::FedAvg, Algorithm::FedZmg, Algorithm::FedAdam}) {
        const auto cfg = small_config(a);
        const auto d = cfg.model.num_params();
        for (const auto& r : run_experiment(cfg).rounds) {
            REQUIRE(r.values_down.size() == cfg.cohort);
            REQUIRE(r.values_up.size() == cfg.cohort);
            for (std::size_t k = 0; k < cfg.cohort; ++k) {
                CHECK(r.values_down[k] == d);
                CHECK(r.values_up[k] == d);
            }
        }
    }
}

TEST_CASE("divergence carries the partial series") {
    const auto fed = regression_federation(3, 10, 3, 12);
    auto cfg = regression_config(Algorithm::FedAvg, 3);
    cfg.client_lr = 5.0;
    cfg.rounds = 50;
    cfg.cohort = 3;
    try {
        run_experiment(cfg, fed);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.round() >= 1);
        CHECK(e.partial_series().size() == e.round() - 1);
        CHECK(e.client().has_value());
    }
}

TEST_CASE("config validation names fields") {
    auto cfg = small_config(Algorithm::FedAvg);
    cfg.cohort = 7;
    try {
        cfg.validate(6);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "experiment.cohort, data.clients");
    }
    cfg = small_config(Algorithm::FedAvg);
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(6), ConfigError);
    cfg = small_config(Algorithm::FedAvg);
    cfg.rounds = 0;
    CHECK_THROWS_AS(cfg.validate(6), ConfigError);
}

TEST_CASE("inverse schedule") {
    LrSchedule s{LrSchedule::Kind::Inverse, 2.0, 8.0};
    CHECK(s.at(0.1, 0) == doctest::Approx(0.25));
    CHECK(s.at(0.1, 8) == doctest::Approx(0.125));
    LrSchedule c;
    CHECK(c.at(0.1, 1000) == 0.1);
}

TEST_CASE("fixture federations") {
    auto cfg = small_config(Algorithm::FedAvg);
    const auto clients = generate_federation(cfg.recipe);
    const auto dir = std::filesystem::temp_directory_path() / ("fedzmg_engine_fixture_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    export_federation(dir, clients);
    auto fixed = cfg;
    fixed.fixture = dir;
    const auto fed = load_federation(fixed);
    REQUIRE(fed.clients.size() == clients.size());
    CHECK(fed.eval.size() == [&] {
        std::size_t n = 0;
        for (const auto& c : clients) n += c.num_samples();
        return n;
    }());
    const auto a = run_experiment(fixed, fed);
    CHECK(a.rounds.size() == cfg.rounds);
    std::filesystem::remove_all(dir);
}
