#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fedzmg/dataset.hpp"

namespace fedzmg {

enum class TaskKind { Classification, Regression };

// Recipe for a synthetic non-IID federation.
//
// Classification: every client draws label proportions from Dirichlet(alpha)
// over the classes, then samples features from class-conditional Gaussians
// N(mu_c, noise_scale^2 I) with class means shared across clients.
// Regression: features x0 ~ N(0, I), targets x0.w_true + noise_scale * eps.
// In both cases each client's observed features are shifted by b_k * 1 with
// b_k ~ U(-bias_shift_scale, bias_shift_scale): a pure per-client intensity
// shift that leaves labels untouched.
struct DataRecipe {
    TaskKind task = TaskKind::Classification;
    std::size_t num_clients = 10;
    std::size_t classes = 10;
    std::size_t input_dim = 20;
    std::size_t samples_min = 50;
    std::size_t samples_max = 50;
    double dirichlet_alpha = 1.0;
    double bias_shift_scale = 0.0;
    double noise_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Alpha at or above this value is treated as a request for uniform labels.
inline constexpr double kUniformAlpha = 1e6;

std::vector<ClientDataset> generate_federation(const DataRecipe& recipe);

// Held-out evaluation set drawn from the same class means (or regression
// weights) with no bias shift: 100 samples per class, or 1000 regression
// samples.
Batch generate_eval_set(const DataRecipe& recipe);

// Integer label histogram of one client.
std::vector<std::size_t> label_histogram(const ClientDataset& client, std::size_t classes);

struct ClientHeterogeneity {
    std::size_t client_id = 0;
    std::size_t volume = 0;
    std::size_t label_diversity = 0;
    double normalized_entropy = 0.0;
    double gini = 0.0;
    std::optional<double> kl_divergence;
    double dominant_class_fraction = 0.0;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

struct HeterogeneityReport {
    std::vector<ClientHeterogeneity> per_client;
    MetricSummary volume;
    MetricSummary label_diversity;
    MetricSummary normalized_entropy;
    MetricSummary gini;
    std::optional<MetricSummary> kl_divergence;
    MetricSummary dominant_class_fraction;
};

// Metric definitions on a client's count vector c over all classes:
//   normalized entropy = H(c / n) / log(classes)
//   gini               = sum_ij |c_i - c_j| / (2 classes^2 mean(c)), zeros included
//   kl                 = KL(client || pooled), both smoothed by 1e-9
// include_kl = false mirrors datasets where the divergence is not reported.
HeterogeneityReport heterogeneity_report(const std::vector<ClientDataset>& clients, std::size_t classes,
                                         bool include_kl = true);

// Per-count-vector metric helpers (exposed for tests and tooling).
double normalized_entropy(const std::vector<std::size_t>& counts);
double gini_coefficient(const std::vector<std::size_t>& counts);
double smoothed_kl(const std::vector<double>& p, const std::vector<double>& q, double smoothing = 1e-9);

// Directory layout: manifest.csv (client_id,n_k,checksum) plus one
// client_<id>.csv per client (label,x0,...,x{d-1}); optional eval.csv.
void export_federation(const std::filesystem::path& dir, const std::vector<ClientDataset>& clients,
                       const Batch* eval = nullptr);

struct ImportedFederation {
    std::vector<ClientDataset> clients;
    std::optional<Batch> eval;
};

// Verifies each client file against the manifest checksum.
ImportedFederation import_federation(const std::filesystem::path& dir);

}  // namespace fedzmg
