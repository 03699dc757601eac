#include "fedzmg/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedzmg/errors.hpp"
#include "fedzmg/zmg.hpp"

namespace fedzmg {

namespace {

void check_step_args(double lr, double weight_decay, double momentum) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw NumericError("client step: learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw NumericError("client step: weight decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw NumericError("client step: momentum must lie in [0, 1)");
}

}  // namespace

void client_step(ParamSet& w, const ParamSet& g, ClientOptState& state, const ClientStepOptions& opt) {
    check_step_args(opt.lr, opt.weight_decay, opt.momentum);
    require_same_shape(w, g, "client_step");
    g.require_finite("client_step gradient");
    if (state.momentum_buffer.size() == 0) state.momentum_buffer = ParamSet::zeros_like(w);
    require_same_shape(w, state.momentum_buffer, "client_step momentum buffer");

    auto buf = state.momentum_buffer.values();
    const auto gv = g.values();

    if (opt.project && opt.placement == MomentumPlacement::ProjectFirst) {
        ParamSet projected = apply_zmg(g);
        const auto pv = projected.values();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = opt.momentum * buf[i] + pv[i];
    } else {
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = opt.momentum * buf[i] + gv[i];
    }

    const double decay = 1.0 - opt.lr * opt.weight_decay;
    auto wv = w.values();
    if (opt.project && opt.placement == MomentumPlacement::ProjectBuffer) {
        ParamSet direction = apply_zmg(state.momentum_buffer);
        const auto dv = direction.values();
        for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = wv[i] * decay - opt.lr * dv[i];
    } else {
        for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = wv[i] * decay - opt.lr * buf[i];
    }
    ++state.step_count;
}

ClientStepResult zmg_sgd_step(const ParamSet& w, const ParamSet& g, const ClientOptState& state, double lr,
                              double weight_decay, double momentum, MomentumPlacement placement) {
    if (!(lr > 0.0)) throw NumericError("zmg_sgd_step: learning rate must be > 0");
    ClientStepResult r{w, state};
    client_step(r.weights, g, r.state, {lr, weight_decay, momentum, true, placement});
    return r;
}

void sgd_step_inplace(ParamSet& w, const ParamSet& g, double lr) {
    require_same_shape(w, g, "sgd_step");
    g.require_finite("sgd_step gradient");
    auto wv = w.values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= lr * gv[i];
}

ParamSet sgd_step(const ParamSet& w, const ParamSet& g, double lr) {
    if (!(lr > 0.0)) throw NumericError("sgd_step: learning rate must be > 0");
    ParamSet out = w;
    sgd_step_inplace(out, g, lr);
    return out;
}

AggregationWeights::AggregationWeights(std::vector<ClientWeight> weights) : entries_(std::move(weights)) {
    if (entries_.empty()) throw DimensionError("aggregation weights: empty cohort");
    std::sort(entries_.begin(), entries_.end(),
              [](const ClientWeight& a, const ClientWeight& b) { return a.client_id < b.client_id; });
    double total = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!(entries_[i].p > 0.0) || !std::isfinite(entries_[i].p)) {
            throw NumericError("aggregation weights must be positive and finite");
        }
        if (i > 0 && entries_[i].client_id == entries_[i - 1].client_id) {
            throw DimensionError("aggregation weights: duplicate client id " + std::to_string(entries_[i].client_id));
        }
        total += entries_[i].p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw NumericError("aggregation weights must sum to 1");
}

AggregationWeights AggregationWeights::from_sample_counts(const std::vector<ClientId>& ids,
                                                          const std::vector<std::size_t>& counts) {
    if (ids.size() != counts.size()) throw DimensionError("aggregation weights: id/count size mismatch");
    if (ids.empty()) throw DimensionError("aggregation weights: empty cohort");
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    std::vector<ClientWeight> w;
    w.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (counts[i] == 0) throw DimensionError("aggregation weights: client with zero samples");
        w.push_back({ids[i], static_cast<double>(counts[i]) / total});
    }
    return AggregationWeights(std::move(w));
}

double AggregationWeights::weight_of(ClientId id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                               [](const ClientWeight& w, ClientId v) { return w.client_id < v; });
    if (it == entries_.end() || it->client_id != id) {
        throw DimensionError("aggregation weights: unknown client id " + std::to_string(id));
    }
    return it->p;
}

ParamSet weighted_average(const std::vector<ParamSet>& models, const std::vector<ClientId>& ids,
                          const AggregationWeights& weights) {
    if (models.empty()) throw DimensionError("weighted_average: empty cohort");
    if (models.size() != ids.size() || models.size() != weights.size()) {
        throw DimensionError("weighted_average: " + std::to_string(models.size()) + " models but " +
                             std::to_string(weights.size()) + " weights");
    }
    for (const auto& m : models) require_same_shape(models.front(), m, "weighted_average");

    std::vector<std::size_t> order(models.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    // Seed the accumulator with the first term so a single client with p = 1
    // comes back bit-identical (including signed zeros).
    ParamSet out = models[order[0]];
    {
        const double p = weights.weight_of(ids[order[0]]);
        if (p != 1.0) {
            for (auto& v : out.values()) v *= p;
        }
    }
    auto acc = out.values();
    for (std::size_t k = 1; k < order.size(); ++k) {
        const double p = weights.weight_of(ids[order[k]]);
        const auto mv = models[order[k]].values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p * mv[i];
    }
    return out;
}

ParamSet weighted_average(const std::vector<ParamSet>& models, const AggregationWeights& weights) {
    std::vector<ClientId> ids;
    ids.reserve(weights.size());
    for (const auto& e : weights.entries()) ids.push_back(e.client_id);
    return weighted_average(models, ids, weights);
}

ServerAdamState ServerAdamState::zeros(std::size_t dim, double beta1, double beta2, double eps) {
    ServerAdamState s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), beta1, beta2, eps};
    s.validate(dim);
    return s;
}

void ServerAdamState::validate(std::size_t dim) const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw NumericError("server adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw NumericError("server adam: beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw NumericError("server adam: eps must be > 0");
    if (first_moment.size() != dim || second_moment.size() != dim) {
        throw DimensionError("server adam: moment dimension does not match the model");
    }
}

void adam_server_step_inplace(ParamSet& w_global, const ParamSet& pseudo_grad, ServerAdamState& state,
                              double server_lr) {
    if (!(server_lr > 0.0)) throw NumericError("adam_server_step: server learning rate must be > 0");
    require_same_shape(w_global, pseudo_grad, "adam_server_step");
    pseudo_grad.require_finite("adam_server_step pseudo-gradient");
    state.validate(w_global.size());

    auto w = w_global.values();
    const auto delta = pseudo_grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double m = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * delta[i];
        const double v = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * delta[i] * delta[i];
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        w[i] -= server_lr * m / (std::sqrt(v) + state.eps);
    }
}

ServerStepResult adam_server_step(const ParamSet& w_global, const ParamSet& pseudo_grad,
                                  const ServerAdamState& state, double server_lr) {
    ServerStepResult r{w_global, state};
    adam_server_step_inplace(r.weights, pseudo_grad, r.state, server_lr);
    return r;
}

ParamSet pseudo_gradient(const ParamSet& w_global, const ParamSet& w_avg) {
    require_same_shape(w_global, w_avg, "pseudo_gradient");
    ParamSet out = w_global;
    auto o = out.values();
    const auto a = w_avg.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= a[i];
    return out;
}

}  // namespace fedzmg
