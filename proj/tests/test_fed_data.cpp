#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include <unistd.h>

#include "fedzmg/errors.hpp"
#include "fedzmg/fed_data.hpp"
#include "fedzmg/io.hpp"

using namespace fedzmg;
namespace fs = std::filesystem;

namespace {

ClientDataset from_counts(std::size_t id, const std::vector<std::size_t>& counts) {
    const auto n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    ClientDataset c{id, Matrix::Zero(static_cast<Eigen::Index>(n), 2), Vector(static_cast<Eigen::Index>(n))};
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i) c.labels[row++] = static_cast<double>(k);
    }
    return c;
}

double mean_metric(const HeterogeneityReport& r, double ClientHeterogeneity::*field) {
    double s = 0.0;
    for (const auto& c : r.per_client) s += c.*field;
    return s / static_cast<double>(r.per_client.size());
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("fedzmg_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("metric fixtures") {
    CHECK(normalized_entropy({5, 5, 5, 5}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(gini_coefficient({5, 5, 5, 5}) == doctest::Approx(0.0));
    CHECK(normalized_entropy({0, 9, 0}) == doctest::Approx(0.0));
    CHECK(std::abs(normalized_entropy({3, 1}) - 0.8112781244591328) < 1e-6);
    CHECK(gini_coefficient({3, 1}) == doctest::Approx(0.25));
    CHECK(gini_coefficient({0, 0, 0, 10}) == doctest::Approx(0.75));
    CHECK(smoothed_kl({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(0.0));
    const double kl = smoothed_kl({0.75, 0.25}, {0.5, 0.5});
    CHECK(kl == doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)).epsilon(1e-8));
    CHECK(smoothed_kl({1.0, 0.0}, {0.0, 1.0}) > 10.0);
}

TEST_CASE("heterogeneity report fixtures") {
    const auto uniform = heterogeneity_report({from_counts(0, {4, 4, 4}), from_counts(1, {2, 2, 2})}, 3);
    for (const auto& c : uniform.per_client) {
        CHECK(c.normalized_entropy == doctest::Approx(1.0));
        CHECK(c.gini == doctest::Approx(0.0));
        REQUIRE(c.kl_divergence);
        CHECK(std::abs(*c.kl_divergence) < 1e-12);
        CHECK(c.label_diversity == 3);
    }
    CHECK(uniform.volume.mean == doctest::Approx(9.0));
    CHECK(uniform.volume.stddev == doctest::Approx(3.0));

    const auto single = heterogeneity_report({from_counts(7, {0, 6, 0})}, 3);
    CHECK(single.per_client[0].client_id == 7);
    CHECK(single.per_client[0].normalized_entropy == doctest::Approx(0.0));
    CHECK(single.per_client[0].label_diversity == 1);
    CHECK(single.per_client[0].dominant_class_fraction == doctest::Approx(1.0));

    const auto skew = heterogeneity_report({from_counts(0, {3, 1})}, 2, false);
    CHECK(std::abs(skew.per_client[0].normalized_entropy - 0.8113) < 1e-4);
    CHECK(skew.per_client[0].dominant_class_fraction == doctest::Approx(0.75));
    CHECK(!skew.per_client[0].kl_divergence);
    CHECK(!skew.kl_divergence);

    CHECK_THROWS_AS(heterogeneity_report({from_counts(0, {3, 1})}, 0), DimensionError);
    CHECK_THROWS(heterogeneity_report({}, 2));
}

TEST_CASE("generate_federation basics") {
    DataRecipe r;
    r.num_clients = 1;
    r.samples_min = r.samples_max = 80;
    auto clients = generate_federation(r);
    REQUIRE(clients.size() == 1);
    CHECK(clients[0].num_samples() == 80);

    r.num_clients = 12;
    r.samples_min = 30;
    r.samples_max = 90;
    r.seed = 4;
    clients = generate_federation(r);
    const auto again = generate_federation(r);
    std::size_t total = 0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        CHECK(clients[k].client_id == k);
        CHECK(clients[k].num_samples() >= 30);
        CHECK(clients[k].num_samples() <= 90);
        CHECK(clients[k].features == again[k].features);
        CHECK(clients[k].labels == again[k].labels);
        total += clients[k].num_samples();
    }
    CHECK(total > 0);
}

TEST_CASE("near-infinite concentration gives near-uniform label histograms") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        DataRecipe r;
        r.num_clients = 5;
        r.classes = 10;
        r.samples_min = r.samples_max = 100;
        r.dirichlet_alpha = 1e6;
        r.seed = seed;
        for (const auto& c : generate_federation(r)) {
            const auto h = label_histogram(c, 10);
            double tv = 0.0;
            for (auto x : h) tv += std::abs(static_cast<double>(x) / 100.0 - 0.1);
            CHECK(0.5 * tv <= 0.05);
        }
    }
}

TEST_CASE("concentration orders entropy and divergence") {
    double ent_low = 0, ent_high = 0, kl_low = 0, kl_high = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DataRecipe r;
        r.num_clients = 20;
        r.seed = seed;
        r.dirichlet_alpha = 0.1;
        const auto low = heterogeneity_report(generate_federation(r), r.classes);
        r.dirichlet_alpha = 100;
        const auto high = heterogeneity_report(generate_federation(r), r.classes);
        ent_low += mean_metric(low, &ClientHeterogeneity::normalized_entropy);
        ent_high += mean_metric(high, &ClientHeterogeneity::normalized_entropy);
        kl_low += low.kl_divergence->mean;
        kl_high += high.kl_divergence->mean;
    }
    CHECK(ent_low < ent_high);
    CHECK(kl_low > kl_high);
}

TEST_CASE("bias shift changes features only") {
    DataRecipe r;
    r.seed = 9;
    r.dirichlet_alpha = 0.5;
    const auto base = generate_federation(r);
    r.bias_shift_scale = 25.0;
    const auto shifted = generate_federation(r);
    for (std::size_t k = 0; k < base.size(); ++k) {
        CHECK(base[k].labels == shifted[k].labels);
        // The shift is a constant per client: differences are equal in every coordinate.
        const Matrix diff = shifted[k].features - base[k].features;
        CHECK((diff.array() - diff(0, 0)).abs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("recipe validation") {
    DataRecipe r;
    r.num_clients = 0;
    CHECK_THROWS_AS(r.validate(), RecipeError);
    r = DataRecipe{};
    r.dirichlet_alpha = 0.0;
    CHECK_THROWS_AS(r.validate(), RecipeError);
    r = DataRecipe{};
    r.samples_min = 5;
    r.samples_max = 5;
    r.dirichlet_alpha = kUniformAlpha;
    CHECK_THROWS_AS(r.validate(), RecipeError);
    r = DataRecipe{};
    r.samples_min = 60;
    r.samples_max = 50;
    CHECK_THROWS_AS(r.validate(), RecipeError);
    r = DataRecipe{};
    r.bias_shift_scale = -1.0;
    CHECK_THROWS_AS(r.validate(), RecipeError);
}

TEST_CASE("regression federations") {
    DataRecipe r;
    r.task = TaskKind::Regression;
    r.input_dim = 4;
    r.noise_scale = 0.0;
    r.seed = 2;
    const auto clients = generate_federation(r);
    const auto eval = generate_eval_set(r);
    CHECK(eval.size() == 1000);
    // Noise-free targets share one weight vector across clients (before shifts).
    const Matrix x = eval.features;
    const Eigen::VectorXd w = (x.transpose() * x).ldlt().solve(x.transpose() * eval.labels);
    CHECK((x * w - eval.labels).norm() < 1e-8);
}

TEST_CASE("export and import round trip") {
    DataRecipe r;
    r.num_clients = 4;
    r.seed = 12;
    r.bias_shift_scale = 3.0;
    const auto clients = generate_federation(r);
    const auto eval = generate_eval_set(r);
    const auto dir = temp_dir("roundtrip");
    export_federation(dir, clients, &eval);
    const auto back = import_federation(dir);
    REQUIRE(back.clients.size() == clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
        CHECK(back.clients[k].client_id == clients[k].client_id);
        CHECK(back.clients[k].features == clients[k].features);
        CHECK(back.clients[k].labels == clients[k].labels);
    }
    REQUIRE(back.eval);
    CHECK(back.eval->features == eval.features);

    std::string text = io::read_file(dir / "client_2.csv");
    text[text.size() - 3] = text[text.size() - 3] == '1' ? '2' : '1';
    io::write_file(dir / "client_2.csv", text);
    CHECK_THROWS_AS(import_federation(dir), IoError);
    fs::remove_all(dir);
}
