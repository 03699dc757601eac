#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedzmg/dataset.hpp"
#include "fedzmg/errors.hpp"
#include "fedzmg/fed_data.hpp"
#include "fedzmg/models.hpp"
#include "fedzmg/optimizers.hpp"

namespace fedzmg {

enum class Algorithm { FedAvg, FedZmg, FedAdam };

const char* to_string(Algorithm a) noexcept;
Algorithm parse_algorithm(const std::string& name);

struct LrSchedule {
    enum class Kind { Constant, Inverse };
    Kind kind = Kind::Constant;
    double beta = 0.0;   // inverse: n_t = beta / (t + gamma)
    double gamma = 1.0;

    double at(double base_lr, std::size_t global_step) const noexcept;
};

struct ExperimentConfig {
    Algorithm algorithm = Algorithm::FedZmg;
    ModelSpec model = {ModelKind::LogisticRegression, 20, 10, 0};
    DataRecipe recipe;
    std::optional<std::filesystem::path> fixture;  // replaces the recipe when set

    double client_lr = 0.1;
    // Server learning rate. FedAvg/FedZMG apply w - server_lr * (w - avg),
    // which is the plain weighted average at the default 1.0.
    double server_lr = 1.0;
    double weight_decay = 5e-4;  // FedZMG only
    double momentum = 0.9;       // FedZMG only
    MomentumPlacement momentum_placement = MomentumPlacement::ProjectFirst;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-3;

    std::size_t epochs = 4;
    std::size_t cohort = 10;
    std::size_t rounds = 100;
    std::size_t batch_size = 20;
    std::size_t eval_every = 1;
    std::uint64_t seed = 1;
    LrSchedule lr_schedule;
    InitScheme init = InitScheme::Uniform;
    std::size_t workers = 1;
    double divergence_threshold = 1e6;

    // Throws ConfigError naming the offending field(s).
    void validate(std::size_t num_clients) const;
};

struct Federation {
    std::vector<ClientDataset> clients;
    Batch eval;
};

// Builds the federation from the fixture directory if set, else from the
// recipe. A fixture without eval.csv evaluates on the pooled client data.
Federation load_federation(const ExperimentConfig& cfg);

struct RoundRecord {
    std::size_t round = 0;  // 1-based
    std::optional<double> val_accuracy;
    std::optional<double> val_loss;
    double train_loss = 0.0;
    std::vector<ClientId> cohort;
    std::uint64_t global_param_checksum = 0;
    // Values moved through the simulated channel, per cohort member.
    std::vector<std::size_t> values_down;
    std::vector<std::size_t> values_up;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t round, std::optional<ClientId> client,
                    std::optional<std::size_t> step)
        : Error(what), round_(round), client_(client), step_(step) {}

    std::size_t round() const noexcept { return round_; }
    std::optional<ClientId> client() const noexcept { return client_; }
    std::optional<std::size_t> step() const noexcept { return step_; }

    const std::vector<RoundRecord>& partial_series() const noexcept { return partial_; }
    void set_partial_series(std::vector<RoundRecord> s) { partial_ = std::move(s); }

private:
    std::size_t round_;
    std::optional<ClientId> client_;
    std::optional<std::size_t> step_;
    std::vector<RoundRecord> partial_;
};

// Uniform sample of C client ids out of K without replacement, a pure
// function of (seed, round); returned sorted ascending.
std::vector<ClientId> sample_cohort(std::size_t num_clients, std::size_t cohort, std::size_t round,
                                    std::uint64_t seed);

struct LocalResult {
    ParamSet weights;
    double mean_loss = 0.0;
    std::size_t steps = 0;
};

// E epochs of shuffled mini-batch passes starting from w_init. Batch order is
// drawn from a (seed, round, client, epoch) stream.
LocalResult local_train(const ClientDataset& client, const ParamSet& w_init, const ExperimentConfig& cfg,
                        std::size_t round);

// Counts every value that crosses the simulated client/server boundary.
class Channel {
public:
    ParamSet transmit(const ParamSet& payload) {
        values_ += payload.size();
        return payload;
    }
    std::size_t values() const noexcept { return values_; }

private:
    std::size_t values_ = 0;
};

struct EngineState {
    ParamSet global;
    std::optional<ServerAdamState> adam;
    std::size_t completed_rounds = 0;

    static EngineState initial(const ExperimentConfig& cfg, std::optional<ParamSet> init = std::nullopt);
};

RoundRecord run_round(EngineState& state, const ExperimentConfig& cfg, const Federation& fed, std::size_t round);

using RoundSink = std::function<void(const RoundRecord&)>;

struct ExperimentResult {
    std::vector<RoundRecord> rounds;
    ParamSet final_global;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Federation& fed, const RoundSink& sink = {},
                                std::optional<ParamSet> init = std::nullopt);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundSink& sink = {});

}  // namespace fedzmg
