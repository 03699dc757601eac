#include "fedzmg/zmg.hpp"

#include <cmath>
#include <string>

#include "fedzmg/errors.hpp"

namespace fedzmg {

namespace {

// Neumaier summation; one accumulator per column so a row-major sweep stays
// a single pass over memory.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) noexcept {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    double value() const noexcept { return sum + carry; }
};

void require_finite(std::span<const double> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
        }
    }
}

}  // namespace

double compensated_mean(std::span<const double> v) noexcept {
    CompensatedSum s;
    for (double x : v) s.add(x);
    return s.value() / static_cast<double>(v.size());
}

ProjectedVector project_vector(std::span<const double> g) {
    if (g.empty()) throw DimensionError("project_vector: empty vector");
    require_finite(g, "project_vector");

    const double mean = compensated_mean(g);
    ProjectedVector out;
    out.values.resize(g.size());
    double in_sq = 0.0;
    double out_sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.values[i] = g[i] - mean;
        in_sq += g[i] * g[i];
        out_sq += out.values[i] * out.values[i];
    }
    out.stats.input_norm_sq = in_sq;
    out.stats.output_norm_sq = out_sq;
    out.stats.removed_mean_norm_sq = static_cast<double>(g.size()) * mean * mean;
    return out;
}

void project_matrix_columns_inplace(std::span<double> g, std::size_t in_dim, std::size_t out_dim) {
    if (in_dim == 0 || out_dim == 0) throw DimensionError("project_matrix_columns: zero dimension");
    if (g.size() != in_dim * out_dim) {
        throw DimensionError("project_matrix_columns: storage holds " + std::to_string(g.size()) +
                             " values, expected " + std::to_string(in_dim * out_dim));
    }
    require_finite(g, "project_matrix_columns");

    std::vector<CompensatedSum> sums(out_dim);
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double* row = g.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) sums[j].add(row[j]);
    }
    std::vector<double> means(out_dim);
    for (std::size_t j = 0; j < out_dim; ++j) means[j] = sums[j].value() / static_cast<double>(in_dim);

    for (std::size_t i = 0; i < in_dim; ++i) {
        double* row = g.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) row[j] -= means[j];
    }
}

std::vector<double> project_matrix_columns(std::span<const double> g, std::size_t in_dim,
                                           std::size_t out_dim) {
    std::vector<double> out(g.begin(), g.end());
    project_matrix_columns_inplace(out, in_dim, out_dim);
    return out;
}

void apply_zmg_inplace(ParamSet& grad) {
    grad.validate();
    for (std::size_t s = 0; s < grad.layouts().size(); ++s) {
        const auto& l = grad.layouts()[s];
        if (l.is_matrix()) project_matrix_columns_inplace(grad.segment(s), l.in_dim, l.out_dim);
    }
}

ParamSet apply_zmg(const ParamSet& grad) {
    ParamSet out = grad;
    apply_zmg_inplace(out);
    return out;
}

DistanceReduction projected_distance_reduction(std::span<const double> g_i, std::span<const double> g_j) {
    if (g_i.size() != g_j.size()) {
        throw DimensionError("projected_distance_reduction: dimensions " + std::to_string(g_i.size()) + " and " +
                             std::to_string(g_j.size()) + " differ");
    }
    if (g_i.empty()) throw DimensionError("projected_distance_reduction: empty vectors");

    const auto pi = project_vector(g_i);
    const auto pj = project_vector(g_j);
    const double d = static_cast<double>(g_i.size());
    const double gap = compensated_mean(g_i) - compensated_mean(g_j);

    DistanceReduction r;
    r.reduced_dist_sq = squared_distance(pi.values, pj.values);
    r.mean_gap_term = d * gap * gap;
    return r;
}

}  // namespace fedzmg
