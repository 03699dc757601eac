#pragma once

// Zero-mean gradient projection. The operator g -> g - mean(g) * 1 is the
// orthogonal projection onto the hyperplane perpendicular to the all-ones
// vector; it is always applied as explicit mean subtraction.

#include <cstddef>
#include <span>
#include <vector>

#include "fedzmg/param_set.hpp"

namespace fedzmg {

struct ProjectionStats {
    double removed_mean_norm_sq = 0.0;  // d * mean^2
    double input_norm_sq = 0.0;
    double output_norm_sq = 0.0;
};

struct ProjectedVector {
    std::vector<double> values;
    ProjectionStats stats;
};

// Throws DimensionError on empty input, NumericError on non-finite entries.
ProjectedVector project_vector(std::span<const double> g);

// Compensated mean of a strided sequence.
double compensated_mean(std::span<const double> v) noexcept;

// Column-wise projection of a row-major in_dim x out_dim matrix: each column
// (one output unit's incoming weights) gets its mean over the input dimension
// removed.
std::vector<double> project_matrix_columns(std::span<const double> g, std::size_t in_dim,
                                           std::size_t out_dim);
void project_matrix_columns_inplace(std::span<double> g, std::size_t in_dim, std::size_t out_dim);

// Projects every matrix segment column-wise; bias segments pass through
// untouched.
ParamSet apply_zmg(const ParamSet& grad);
void apply_zmg_inplace(ParamSet& grad);

struct DistanceReduction {
    double reduced_dist_sq = 0.0;  // |Phi g_i - Phi g_j|^2
    double mean_gap_term = 0.0;    // d (mean_i - mean_j)^2
};

DistanceReduction projected_distance_reduction(std::span<const double> g_i, std::span<const double> g_j);

}  // namespace fedzmg
