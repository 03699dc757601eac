#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedzmg/dataset.hpp"
#include "fedzmg/optimizers.hpp"
#include "fedzmg/param_set.hpp"

namespace fedzmg {

enum class ModelKind { LinearRegression, LogisticRegression, Mlp };

const char* to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(const std::string& name);

// Layouts:
//   linear_regression   : W[input_dim x 1]                (no intercept)
//   logistic_regression : W[input_dim x classes], b[classes]
//   mlp                 : W1[input_dim x hidden], b1[hidden],
//                         W2[hidden x classes],   b2[classes]
struct ModelSpec {
    ModelKind kind = ModelKind::LogisticRegression;
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::size_t hidden = 0;

    static ModelSpec linear_regression(std::size_t input_dim);
    static ModelSpec logistic_regression(std::size_t input_dim, std::size_t classes);
    static ModelSpec mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes);

    bool is_classifier() const noexcept { return kind != ModelKind::LinearRegression; }
    std::vector<LayerLayout> layouts() const;
    std::size_t num_params() const;
    void validate() const;
};

enum class InitScheme { Uniform, UniformCentered, Zeros };

const char* to_string(InitScheme scheme) noexcept;
InitScheme parse_init_scheme(const std::string& name);

// Uniform: matrix entries ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
// UniformCentered: the same draw with every matrix column shifted to zero
// mean, so all column sums start equal (zero-sum updates keep them there).
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed, InitScheme scheme = InitScheme::Uniform);

struct LossAndGrad {
    double loss = 0.0;
    ParamSet grad;
};

// Mean per-sample loss and its exact gradient. Linear regression uses
// 0.5 * (x.w - y)^2; classifiers use softmax cross-entropy, the MLP with a
// tanh hidden layer.
LossAndGrad loss_and_grad(const ModelSpec& spec, const ParamSet& w, const Batch& batch);
double loss(const ModelSpec& spec, const ParamSet& w, const Batch& batch);

// Row-wise logits (classifiers) or predictions (regression, one column).
Matrix forward(const ModelSpec& spec, const ParamSet& w, const Matrix& features);

// Fraction of samples whose arg-max logit equals the label; ties go to the
// lowest class index.
double accuracy(const ModelSpec& spec, const ParamSet& w, const Batch& data);

// Extreme eigenvalues of (1/n) X^T X: the smoothness and strong-convexity
// constants of one client's least-squares objective.
struct CurvatureBounds {
    double smoothness = 0.0;        // L
    double strong_convexity = 0.0;  // mu
};
CurvatureBounds quadratic_curvature(const Matrix& features);

struct QuadraticOptimum {
    ParamSet w_star;
    double f_star = 0.0;
    std::vector<ParamSet> client_optima;
    std::vector<double> client_f_star;
    double heterogeneity_gap = 0.0;  // F* - sum_k p_k F_k*
};

// Exact minimizer of sum_k p_k F_k for least-squares clients via the normal
// equations. Throws ConditioningError (with the smallest eigenvalue) when the
// pooled system is singular.
QuadraticOptimum quadratic_optimum(const std::vector<ClientDataset>& clients, const AggregationWeights& p);

// sum_k p_k F_k(w) for linear-regression clients.
double federated_objective(const std::vector<ClientDataset>& clients, const AggregationWeights& p,
                           const ParamSet& w);

}  // namespace fedzmg
