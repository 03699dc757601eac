#pragma once

// Numerical checks of the projected-SGD convergence analysis on
// least-squares federations with full participation.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "fedzmg/dataset.hpp"
#include "fedzmg/fed_data.hpp"
#include "fedzmg/optimizers.hpp"
#include "fedzmg/param_set.hpp"

namespace fedzmg {

// ---- Projected gradient-noise variance --------------------------------------

// tr(Sigma) - (1/d) 1^T Sigma 1, i.e. the trace of the noise covariance that
// survives the zero-mean projection.
double projected_variance(const Eigen::MatrixXd& covariance);

struct Lemma2Check {
    double analytic = 0.0;
    double empirical = 0.0;
};

// Monte Carlo mean of |Phi (g - mean)|^2 over Gaussian draws with the given
// covariance. Trials are split into fixed chunks with their own counter
// streams, so the estimate does not depend on `workers`. Throws NumericError
// if the covariance is not symmetric positive semidefinite.
Lemma2Check verify_lemma2(const Eigen::MatrixXd& covariance, std::size_t trials, std::uint64_t seed,
                          std::size_t workers = 1);

// ---- Convergence harness -----------------------------------------------------

struct TheoryConfig {
    DataRecipe recipe = [] {
        DataRecipe r;
        r.task = TaskKind::Regression;
        r.num_clients = 10;
        r.input_dim = 5;
        r.samples_min = 40;
        r.samples_max = 80;
        r.bias_shift_scale = 1.0;
        r.noise_scale = 0.5;
        r.seed = 3;
        return r;
    }();
    bool identical_clients = false;  // every client gets client 0's data
    std::size_t epochs = 4;
    std::size_t batch_size = 1;  // 0 = full local batch (deterministic)
    std::size_t steps = 10000;
    // Step size n_t = beta / (t + gamma). Unset values are chosen as
    // beta = 2 / mu and the smallest gamma meeting the preconditions.
    std::optional<double> beta;
    std::optional<double> gamma;
    std::size_t record_every = 1;
    std::size_t fit_from = 100;
    std::size_t fit_to = 10000;
    std::uint64_t seed = 1;
    double g_safety_factor = 1.1;
};

// Regression federation whose global optimum satisfies 1^T w* = 0. Targets
// are shifted by X_k (c 1) with c = mean(w*), which moves every client
// optimum and the global optimum by -c 1 without changing the gap.
struct TheoryFederation {
    std::vector<ClientDataset> clients;
    AggregationWeights weights;
    ParamSet w_star;
    double f_star = 0.0;
    double heterogeneity_gap = 0.0;
};

TheoryFederation make_theory_federation(const TheoryConfig& cfg);

struct ClientNoise {
    double trace = 0.0;                 // sigma_k^2
    double mean_direction_energy = 0.0; // (1/d) 1^T Sigma_k 1
};

// Covariance of one client's mini-batch stochastic gradient at w (sampling
// with replacement; batch_size 0 means the full batch, zero noise).
Eigen::MatrixXd gradient_covariance(const ClientDataset& client, const ParamSet& w, std::size_t batch_size);
ClientNoise noise_terms(const Eigen::MatrixXd& covariance);

struct ConstantInputs {
    double smoothness = 0.0;          // L
    double heterogeneity_gap = 0.0;   // Gamma
    double g_sq = 0.0;                // G^2
    std::size_t epochs = 1;
    std::vector<double> p;
    std::vector<ClientNoise> noise;
};

// 6 L Gamma + 8 (E-1)^2 G^2 + sum_k p_k^2 (sigma_k^2 - (1/d) 1^T Sigma_k 1)
double zmg_constant(const ConstantInputs& in);
// Same expression with the variance term left unreduced.
double fedavg_analog_constant(const ConstantInputs& in);

struct TheoryConstants {
    double smoothness = 0.0;         // L
    double strong_convexity = 0.0;   // mu
    double heterogeneity_gap = 0.0;  // Gamma
    double g_sq = 0.0;               // G^2 (warm-up estimate with safety factor)
    std::vector<double> sigma_sq;    // per client
    std::vector<double> mean_direction_energy;
    double c_zmg = 0.0;
    double c_fedavg_analog = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double delta = 0.0;
};

struct ConvergenceCheck {
    std::vector<std::pair<std::size_t, double>> delta_series;  // (t, |w_bar_t - w*|^2)
    TheoryConstants constants;
    bool bound_satisfied = false;
    std::optional<std::size_t> first_violation;
    double fitted_decay_exponent = 0.0;
    double max_mean_direction_drift = 0.0;  // max_t |1^T (w_bar_t - w*)|
    double max_observed_grad_sq = 0.0;
};

// Runs the step-indexed projected local-SGD recursion with full
// participation and synchronization every `epochs` steps, recording
// Delta_t = |w_bar_t - w*|^2 and checking Delta_t <= delta / (gamma + t).
// Precondition violations throw ConfigError.
ConvergenceCheck verify_convergence(const TheoryConfig& cfg);

struct ConstantComparison {
    double c_zmg = 0.0;
    double c_fedavg_analog = 0.0;
    TheoryConstants constants;
};

ConstantComparison compare_constants(const TheoryConfig& cfg);

// Least-squares slope of log(y) against log(t) over t in [from, to].
double fit_log_log_slope(const std::vector<std::pair<std::size_t, double>>& series, std::size_t from,
                         std::size_t to);

}  // namespace fedzmg
