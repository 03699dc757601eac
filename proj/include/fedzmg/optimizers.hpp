#pragma once

#include <cstddef>
#include <vector>

#include "fedzmg/param_set.hpp"

namespace fedzmg {

using ClientId = std::size_t;

// Round-local client optimizer state. Created fresh whenever a client
// receives the global model; never transmitted.
struct ClientOptState {
    ParamSet momentum_buffer;
    std::size_t step_count = 0;

    static ClientOptState fresh(const ParamSet& shape) { return {ParamSet::zeros_like(shape), 0}; }
};

// Where the momentum buffer sits relative to the projection. ProjectFirst
// accumulates projected gradients; ProjectBuffer accumulates raw gradients
// and projects the buffer. The projection is linear, so the two agree up to
// rounding; both are kept so either reading can be run.
enum class MomentumPlacement { ProjectFirst, ProjectBuffer };

struct ClientStepOptions {
    double lr = 0.0;
    double weight_decay = 0.0;
    double momentum = 0.0;
    bool project = true;
    MomentumPlacement placement = MomentumPlacement::ProjectFirst;
};

// General client step:
//   d      = project ? Phi(g) : g
//   buffer = momentum * buffer + d
//   w'     = w * (1 - lr * weight_decay) - lr * buffer
// Updates w and state in place.
void client_step(ParamSet& w, const ParamSet& g, ClientOptState& state, const ClientStepOptions& opt);

struct ClientStepResult {
    ParamSet weights;
    ClientOptState state;
};

ClientStepResult zmg_sgd_step(const ParamSet& w, const ParamSet& g, const ClientOptState& state, double lr,
                              double weight_decay, double momentum,
                              MomentumPlacement placement = MomentumPlacement::ProjectFirst);

// w' = w - lr * g.
ParamSet sgd_step(const ParamSet& w, const ParamSet& g, double lr);
void sgd_step_inplace(ParamSet& w, const ParamSet& g, double lr);

struct ClientWeight {
    ClientId client_id = 0;
    double p = 0.0;
};

// Normalized aggregation weights, kept sorted by client id.
class AggregationWeights {
public:
    AggregationWeights() = default;
    explicit AggregationWeights(std::vector<ClientWeight> weights);

    // p_k = n_k / sum_j n_j over the given cohort.
    static AggregationWeights from_sample_counts(const std::vector<ClientId>& ids,
                                                 const std::vector<std::size_t>& counts);

    const std::vector<ClientWeight>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    double weight_of(ClientId id) const;

private:
    std::vector<ClientWeight> entries_;
};

// sum_k p_k w_k, accumulated in ascending client-id order. models[i] belongs
// to ids[i].
ParamSet weighted_average(const std::vector<ParamSet>& models, const std::vector<ClientId>& ids,
                          const AggregationWeights& weights);

// Convenience overload: models listed in the same order as weights.entries().
ParamSet weighted_average(const std::vector<ParamSet>& models, const AggregationWeights& weights);

struct ServerAdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-3;

    static ServerAdamState zeros(std::size_t dim, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-3);
    void validate(std::size_t dim) const;
};

struct ServerStepResult {
    ParamSet weights;
    ServerAdamState state;
};

// Adam on the server pseudo-gradient delta = w_global - avg(client models),
// without bias correction:
//   m' = b1 m + (1 - b1) delta
//   v' = b2 v + (1 - b2) delta^2
//   w' = w - lr * m' / (sqrt(v') + eps)
ServerStepResult adam_server_step(const ParamSet& w_global, const ParamSet& pseudo_grad,
                                  const ServerAdamState& state, double server_lr);
void adam_server_step_inplace(ParamSet& w_global, const ParamSet& pseudo_grad, ServerAdamState& state,
                              double server_lr);

// w_global - w_avg.
ParamSet pseudo_gradient(const ParamSet& w_global, const ParamSet& w_avg);

}  // namespace fedzmg
