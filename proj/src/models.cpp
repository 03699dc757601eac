#include "fedzmg/models.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedzmg/errors.hpp"
#include "fedzmg/rng.hpp"
#include "fedzmg/zmg.hpp"

namespace fedzmg {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;

ConstMatMap matrix_view(const ParamSet& w, std::size_t seg) {
    const auto& l = w.layouts()[seg];
    return ConstMatMap(w.values().data() + l.offset, static_cast<Eigen::Index>(l.in_dim),
                       static_cast<Eigen::Index>(l.out_dim));
}

MatMap matrix_view(ParamSet& w, std::size_t seg) {
    const auto& l = w.layouts()[seg];
    return MatMap(w.values().data() + l.offset, static_cast<Eigen::Index>(l.in_dim),
                  static_cast<Eigen::Index>(l.out_dim));
}

ConstVecMap bias_view(const ParamSet& w, std::size_t seg) {
    const auto& l = w.layouts()[seg];
    return ConstVecMap(w.values().data() + l.offset, static_cast<Eigen::Index>(l.length));
}

VecMap bias_view(ParamSet& w, std::size_t seg) {
    const auto& l = w.layouts()[seg];
    return VecMap(w.values().data() + l.offset, static_cast<Eigen::Index>(l.length));
}

void check_inputs(const ModelSpec& spec, const ParamSet& w, const Batch& batch) {
    spec.validate();
    if (w.layouts() != spec.layouts()) throw LayoutError("parameters do not match the model layout");
    if (batch.size() == 0) throw DimensionError("empty batch");
    if (batch.input_dim() != spec.input_dim) {
        throw DimensionError("batch has " + std::to_string(batch.input_dim()) + " features, model expects " +
                             std::to_string(spec.input_dim));
    }
    if (static_cast<std::size_t>(batch.labels.size()) != batch.size()) {
        throw DimensionError("batch label count does not match feature rows");
    }
    if (spec.is_classifier()) {
        for (Eigen::Index i = 0; i < batch.labels.size(); ++i) {
            const double y = batch.labels[i];
            if (!(y >= 0.0) || y >= static_cast<double>(spec.classes) || y != std::floor(y)) {
                throw LabelError("label " + std::to_string(y) + " at row " + std::to_string(i) +
                                 " outside [0, " + std::to_string(spec.classes) + ")");
            }
        }
    }
}

// Softmax cross-entropy on logits z (n x C). Overwrites z with
// (softmax - onehot) / n and returns the mean loss.
double softmax_xent_inplace(Matrix& z, const Vector& labels) {
    const Eigen::Index n = z.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = z.row(i);
        const double mx = row.maxCoeff();
        row.array() -= mx;
        const double lse = std::log(row.array().exp().sum());
        const auto y = static_cast<Eigen::Index>(labels[i]);
        total += lse - row(y);
        row.array() = (row.array() - lse).exp();
        row(y) -= 1.0;
    }
    z /= static_cast<double>(n);
    return total / static_cast<double>(n);
}

}  // namespace

const char* to_string(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::LinearRegression: return "linear_regression";
        case ModelKind::LogisticRegression: return "logistic_regression";
        case ModelKind::Mlp: return "mlp";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "linear_regression" || name == "linear") return ModelKind::LinearRegression;
    if (name == "logistic_regression" || name == "logistic") return ModelKind::LogisticRegression;
    if (name == "mlp") return ModelKind::Mlp;
    throw ConfigError("model.kind", "unknown model kind '" + name + "'");
}

const char* to_string(InitScheme scheme) noexcept {
    switch (scheme) {
        case InitScheme::Uniform: return "uniform";
        case InitScheme::UniformCentered: return "uniform_centered";
        case InitScheme::Zeros: return "zeros";
    }
    return "unknown";
}

InitScheme parse_init_scheme(const std::string& name) {
    if (name == "uniform") return InitScheme::Uniform;
    if (name == "uniform_centered") return InitScheme::UniformCentered;
    if (name == "zeros") return InitScheme::Zeros;
    throw ConfigError("model.init", "unknown init scheme '" + name + "'");
}

ModelSpec ModelSpec::linear_regression(std::size_t input_dim) {
    ModelSpec s{ModelKind::LinearRegression, input_dim, 0, 0};
    s.validate();
    return s;
}

ModelSpec ModelSpec::logistic_regression(std::size_t input_dim, std::size_t classes) {
    ModelSpec s{ModelKind::LogisticRegression, input_dim, classes, 0};
    s.validate();
    return s;
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes) {
    ModelSpec s{ModelKind::Mlp, input_dim, classes, hidden};
    s.validate();
    return s;
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw DimensionError("model input_dim must be >= 1");
    if (is_classifier() && classes < 2) throw DimensionError("classifier needs at least 2 classes");
    if (kind == ModelKind::Mlp && hidden == 0) throw DimensionError("mlp hidden width must be >= 1");
}

std::vector<LayerLayout> ModelSpec::layouts() const {
    validate();
    std::vector<LayerLayout> out;
    switch (kind) {
        case ModelKind::LinearRegression:
            out.push_back(LayerLayout::matrix(input_dim, 1, 0));
            break;
        case ModelKind::LogisticRegression:
            out.push_back(LayerLayout::matrix(input_dim, classes, 0));
            out.push_back(LayerLayout::bias(classes, input_dim * classes));
            break;
        case ModelKind::Mlp: {
            std::size_t off = 0;
            out.push_back(LayerLayout::matrix(input_dim, hidden, off));
            off += input_dim * hidden;
            out.push_back(LayerLayout::bias(hidden, off));
            off += hidden;
            out.push_back(LayerLayout::matrix(hidden, classes, off));
            off += hidden * classes;
            out.push_back(LayerLayout::bias(classes, off));
            break;
        }
    }
    return out;
}

std::size_t ModelSpec::num_params() const {
    std::size_t n = 0;
    for (const auto& l : layouts()) n += l.length;
    return n;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed, InitScheme scheme) {
    ParamSet w = ParamSet::zeros_like(spec.layouts());
    if (scheme == InitScheme::Zeros) return w;
    Rng rng = make_stream({seed, stream_tag::kInit});
    for (std::size_t s = 0; s < w.layouts().size(); ++s) {
        const auto& l = w.layouts()[s];
        if (!l.is_matrix()) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : w.segment(s)) v = dist(rng);
        if (scheme == InitScheme::UniformCentered) project_matrix_columns_inplace(w.segment(s), l.in_dim, l.out_dim);
    }
    return w;
}

Matrix forward(const ModelSpec& spec, const ParamSet& w, const Matrix& x) {
    switch (spec.kind) {
        case ModelKind::LinearRegression:
            return x * matrix_view(w, 0);
        case ModelKind::LogisticRegression: {
            Matrix z = x * matrix_view(w, 0);
            z.rowwise() += bias_view(w, 1);
            return z;
        }
        case ModelKind::Mlp: {
            Matrix h = x * matrix_view(w, 0);
            h.rowwise() += bias_view(w, 1);
            h = h.array().tanh().matrix();
            Matrix z = h * matrix_view(w, 2);
            z.rowwise() += bias_view(w, 3);
            return z;
        }
    }
    throw LayoutError("unknown model kind");
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const ParamSet& w, const Batch& batch) {
    check_inputs(spec, w, batch);
    const Matrix& x = batch.features;
    const double n = static_cast<double>(batch.size());
    LossAndGrad out{0.0, ParamSet::zeros_like(w)};

    switch (spec.kind) {
        case ModelKind::LinearRegression: {
            const Vector r = x * matrix_view(w, 0) - batch.labels;
            out.loss = 0.5 * r.squaredNorm() / n;
            matrix_view(out.grad, 0) = x.transpose() * r / n;
            break;
        }
        case ModelKind::LogisticRegression: {
            Matrix z = forward(spec, w, x);
            out.loss = softmax_xent_inplace(z, batch.labels);
            matrix_view(out.grad, 0) = x.transpose() * z;
            bias_view(out.grad, 1) = z.colwise().sum();
            break;
        }
        case ModelKind::Mlp: {
            Matrix h = x * matrix_view(w, 0);
            h.rowwise() += bias_view(w, 1);
            h = h.array().tanh().matrix();
            Matrix z = h * matrix_view(w, 2);
            z.rowwise() += bias_view(w, 3);
            out.loss = softmax_xent_inplace(z, batch.labels);
            matrix_view(out.grad, 2) = h.transpose() * z;
            bias_view(out.grad, 3) = z.colwise().sum();
            Matrix da = (z * matrix_view(w, 2).transpose()).array() * (1.0 - h.array().square());
            matrix_view(out.grad, 0) = x.transpose() * da;
            bias_view(out.grad, 1) = da.colwise().sum();
            break;
        }
    }
    return out;
}

double loss(const ModelSpec& spec, const ParamSet& w, const Batch& batch) {
    check_inputs(spec, w, batch);
    Matrix z = forward(spec, w, batch.features);
    if (spec.kind == ModelKind::LinearRegression) {
        return 0.5 * (z.col(0) - batch.labels).squaredNorm() / static_cast<double>(batch.size());
    }
    return softmax_xent_inplace(z, batch.labels);
}

double accuracy(const ModelSpec& spec, const ParamSet& w, const Batch& data) {
    if (!spec.is_classifier()) throw Error("accuracy is undefined for regression models");
    check_inputs(spec, w, data);
    const Matrix z = forward(spec, w, data.features);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < z.cols(); ++c) {
            if (z(i, c) > z(i, best)) best = c;
        }
        if (static_cast<double>(best) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

CurvatureBounds quadratic_curvature(const Matrix& features) {
    if (features.rows() == 0) throw DimensionError("quadratic_curvature: no samples");
    const Eigen::MatrixXd h = features.transpose() * features / static_cast<double>(features.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
    return {es.eigenvalues().maxCoeff(), es.eigenvalues().minCoeff()};
}

double federated_objective(const std::vector<ClientDataset>& clients, const AggregationWeights& p,
                           const ParamSet& w) {
    double f = 0.0;
    for (const auto& c : clients) {
        const ConstMatMap wm = matrix_view(w, 0);
        const Vector r = c.features * wm - c.labels;
        f += p.weight_of(c.client_id) * 0.5 * r.squaredNorm() / static_cast<double>(c.num_samples());
    }
    return f;
}

QuadraticOptimum quadratic_optimum(const std::vector<ClientDataset>& clients, const AggregationWeights& p) {
    if (clients.empty()) throw DimensionError("quadratic_optimum: no clients");
    const auto d = clients.front().features.cols();
    const auto spec = ModelSpec::linear_regression(static_cast<std::size_t>(d));

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    QuadraticOptimum out;

    for (const auto& c : clients) {
        if (c.features.cols() != d) throw DimensionError("quadratic_optimum: clients differ in input_dim");
        const double n = static_cast<double>(c.num_samples());
        const Eigen::MatrixXd ak = c.features.transpose() * c.features / n;
        const Eigen::VectorXd bk = c.features.transpose() * c.labels / n;
        const double pk = p.weight_of(c.client_id);
        a += pk * ak;
        b += pk * bk;

        // Minimum-norm solution; a rank-deficient client still has a
        // well-defined minimum value F_k*.
        Eigen::VectorXd wk = ak.completeOrthogonalDecomposition().solve(bk);
        ParamSet wk_set(std::vector<double>(wk.data(), wk.data() + d), spec.layouts());
        out.client_f_star.push_back(loss(spec, wk_set, c.as_batch()));
        out.client_optima.push_back(std::move(wk_set));
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(hi, 1.0))) {
        throw ConditioningError("quadratic_optimum: pooled normal equations are singular (smallest eigenvalue " +
                                    std::to_string(lo) + ")",
                                lo);
    }
    const Eigen::VectorXd ws = a.ldlt().solve(b);
    out.w_star = ParamSet(std::vector<double>(ws.data(), ws.data() + d), spec.layouts());
    out.f_star = federated_objective(clients, p, out.w_star);

    double weighted_local = 0.0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        weighted_local += p.weight_of(clients[k].client_id) * out.client_f_star[k];
    }
    out.heterogeneity_gap = out.f_star - weighted_local;
    return out;
}

}  // namespace fedzmg
