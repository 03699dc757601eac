#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace fedzmg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// A set of samples: one feature row per sample. Labels hold class indices
// (stored as integral doubles) for classifiers and real targets for
// regression.
struct Batch {
    Matrix features;
    Vector labels;

    std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
};

struct ClientDataset {
    std::size_t client_id = 0;
    Matrix features;
    Vector labels;

    std::size_t num_samples() const noexcept { return static_cast<std::size_t>(features.rows()); }
    Batch as_batch() const { return {features, labels}; }
};

}  // namespace fedzmg
