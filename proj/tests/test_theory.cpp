#include <doctest.h>

#include <cmath>
#include <random>

#include "fedzmg/errors.hpp"
#include "fedzmg/theory.hpp"

using namespace fedzmg;

namespace {

Eigen::MatrixXd random_psd(std::mt19937_64& rng, Eigen::Index d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    a.row(0).array() += 1.5;
    Eigen::MatrixXd s = a * a.transpose() / static_cast<double>(d);
    return 0.5 * (s + s.transpose());
}

TheoryConfig quick_config() {
    TheoryConfig c;
    c.steps = 2000;
    c.fit_to = 2000;
    return c;
}

}  // namespace

TEST_CASE("projected_variance analytic cases") {
    for (Eigen::Index d = 2; d <= 16; ++d) {
        const double s2 = 1.7;
        CHECK(projected_variance(s2 * Eigen::MatrixXd::Identity(d, d)) ==
              doctest::Approx(static_cast<double>(d - 1) * s2).epsilon(1e-12));
        CHECK(std::abs(projected_variance(Eigen::MatrixXd::Constant(d, d, 1.0 / static_cast<double>(d)))) < 1e-12);
    }
}

TEST_CASE("projected_variance equals tr(Phi Sigma)") {
    std::mt19937_64 rng(2);
    for (Eigen::Index d = 2; d <= 16; ++d) {
        const auto s = random_psd(rng, d);
        const Eigen::MatrixXd phi =
            Eigen::MatrixXd::Identity(d, d) - Eigen::MatrixXd::Constant(d, d, 1.0 / static_cast<double>(d));
        CHECK(std::abs(projected_variance(s) - (phi * s * phi).trace()) < 1e-10 * s.trace());
    }
}

TEST_CASE("verify_lemma2") {
    std::mt19937_64 rng(6);
    const auto s = random_psd(rng, 6);
    const auto a = verify_lemma2(s, 20000, 3, 1);
    CHECK(a.analytic == doctest::Approx(projected_variance(s)));
    CHECK(std::abs(a.empirical - a.analytic) < 0.05 * a.analytic);
    const auto b = verify_lemma2(s, 20000, 3, 4);
    CHECK(a.empirical == b.empirical);

    const auto m = verify_lemma2(Eigen::MatrixXd::Constant(4, 4, 0.25), 5000, 1);
    CHECK(std::abs(m.empirical) < 1e-10);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(verify_lemma2(bad, 100, 1), NumericError);
    Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(3, 3);
    asym(0, 1) = 0.5;
    CHECK_THROWS_AS(verify_lemma2(asym, 100, 1), NumericError);
}

TEST_CASE("theory federation has a zero-sum optimum") {
    const auto fed = make_theory_federation(TheoryConfig{});
    double sum = 0.0;
    for (double x : fed.w_star.values()) sum += x;
    CHECK(std::abs(sum) < 1e-10);
    CHECK(fed.heterogeneity_gap > 0.0);

    TheoryConfig bad;
    bad.recipe.task = TaskKind::Classification;
    CHECK_THROWS_AS(make_theory_federation(bad), ConfigError);
}

TEST_CASE("convergence bound and column-sum invariance") {
    const auto res = verify_convergence(quick_config());
    CHECK(res.bound_satisfied);
    CHECK(!res.first_violation);
    CHECK(res.max_mean_direction_drift < 1e-9);
    CHECK(res.delta_series.front().first == 0);
    CHECK(res.delta_series.size() == 2001);
    CHECK(res.constants.c_zmg < res.constants.c_fedavg_analog);
    CHECK(res.max_observed_grad_sq <= res.constants.g_sq);
    for (const auto& [t, d] : res.delta_series) CHECK(d <= res.constants.delta / (res.constants.gamma + t));
}

TEST_CASE("homogeneous E=1 full batch decreases monotonically") {
    auto cfg = quick_config();
    cfg.identical_clients = true;
    cfg.epochs = 1;
    cfg.batch_size = 0;
    cfg.steps = 500;
    cfg.fit_from = 0;
    const auto res = verify_convergence(cfg);
    CHECK(res.constants.heterogeneity_gap == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(res.constants.heterogeneity_gap) < 1e-10);
    for (std::size_t i = 1; i < res.delta_series.size(); ++i) {
        CHECK(res.delta_series[i].second <= res.delta_series[i - 1].second * (1 + 1e-12));
    }
}

TEST_CASE("preconditions are reported") {
    auto cfg = quick_config();
    cfg.gamma = 2.0;  // not above E
    CHECK_THROWS_AS(verify_convergence(cfg), ConfigError);
    cfg = quick_config();
    cfg.beta = 1e-6;  // below 1/mu
    CHECK_THROWS_AS(verify_convergence(cfg), ConfigError);
    cfg = quick_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(verify_convergence(cfg), ConfigError);
    cfg = quick_config();
    cfg.g_safety_factor = 0.5;
    CHECK_THROWS_AS(verify_convergence(cfg), ConfigError);
}

TEST_CASE("constants") {
    ConstantInputs in;
    in.smoothness = 2.0;
    in.heterogeneity_gap = 0.5;
    in.g_sq = 3.0;
    in.epochs = 3;
    in.p = {0.25, 0.75};
    in.noise = {noise_terms(Eigen::MatrixXd::Identity(4, 4)), noise_terms(Eigen::MatrixXd::Identity(4, 4))};
    const double sum_p2 = 0.25 * 0.25 + 0.75 * 0.75;
    CHECK(fedavg_analog_constant(in) - zmg_constant(in) == doctest::Approx(sum_p2));
    CHECK(fedavg_analog_constant(in) == doctest::Approx(6 * 2.0 * 0.5 + 8 * 4 * 3.0 + sum_p2 * 4));

    // No mean-direction energy: the constants agree.
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(4, 4) - Eigen::MatrixXd::Constant(4, 4, 0.25);
    in.noise = {noise_terms(s), noise_terms(s)};
    CHECK(fedavg_analog_constant(in) == doctest::Approx(zmg_constant(in)).epsilon(1e-14));

    const auto cmp = compare_constants(TheoryConfig{});
    CHECK(cmp.c_zmg < cmp.c_fedavg_analog);
}

TEST_CASE("gradient_covariance") {
    const auto fed = make_theory_federation(TheoryConfig{});
    const auto& c = fed.clients[0];
    const auto w = ParamSet::zeros_like(fed.w_star.layouts());
    CHECK(gradient_covariance(c, w, 0).norm() == 0.0);
    const auto s1 = gradient_covariance(c, w, 1);
    const auto s4 = gradient_covariance(c, w, 4);
    CHECK((s1 - 4.0 * s4).norm() < 1e-10 * s1.norm());
    CHECK(s1.isApprox(s1.transpose()));
}

TEST_CASE("fit_log_log_slope") {
    std::vector<std::pair<std::size_t, double>> s;
    for (std::size_t t = 0; t <= 1000; t += 10) s.emplace_back(t, 5.0 * std::pow(static_cast<double>(t) + 1e-300, -1.0));
    CHECK(fit_log_log_slope(s, 10, 1000) == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK_THROWS_AS(fit_log_log_slope(s, 2000, 3000), SeriesError);
}
