#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fedzmg/errors.hpp"
#include "fedzmg/optimizers.hpp"
#include "fedzmg/zmg.hpp"

using namespace fedzmg;

namespace {

const std::vector<LayerLayout> kLayout{LayerLayout::matrix(3, 2, 0), LayerLayout::bias(2, 6)};

ParamSet random_params(std::mt19937_64& rng, const std::vector<LayerLayout>& layouts = kLayout) {
    std::normal_distribution<double> n(0.0, 1.0);
    auto p = ParamSet::zeros_like(layouts);
    for (auto& x : p.values()) x = n(rng);
    return p;
}

ParamSet column_sums(const ParamSet& w) {
    std::vector<double> s(2, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 2; ++c) s[c] += w[r * 2 + c];
    }
    return ParamSet(s, {LayerLayout::bias(2, 0)});
}

}  // namespace

TEST_CASE("zmg_sgd_step examples") {
    SUBCASE("constant gradient is annihilated") {
        ParamSet w({0.3, -1.2, 2.0}, {LayerLayout::matrix(3, 1, 0)});
        ParamSet g({4.0, 4.0, 4.0}, w.layouts());
        const auto r = zmg_sgd_step(w, g, ClientOptState::fresh(w), 0.1, 0.0, 0.0);
        CHECK(r.weights == w);
    }
    SUBCASE("pure decoupled decay") {
        ParamSet w({1.0, -2.0, 4.0}, {LayerLayout::matrix(3, 1, 0)});
        const auto r = zmg_sgd_step(w, ParamSet::zeros_like(w), ClientOptState::fresh(w), 0.1, 0.0005, 0.0);
        for (std::size_t i = 0; i < 3; ++i) CHECK(r.weights[i] == doctest::Approx(0.99995 * w[i]).epsilon(1e-15));
    }
    SUBCASE("hand evaluation") {
        ParamSet w({0.0, 0.0}, {LayerLayout::matrix(2, 1, 0)});
        ParamSet g({1.0, 3.0}, w.layouts());
        const auto r = zmg_sgd_step(w, g, ClientOptState::fresh(w), 0.5, 0.0, 0.0);
        CHECK(r.weights.data() == std::vector<double>{0.5, -0.5});
        CHECK(r.state.momentum_buffer.data() == std::vector<double>{-1.0, 1.0});
        CHECK(r.state.step_count == 1);
    }
}

TEST_CASE("zmg_sgd_step momentum recursion") {
    std::mt19937_64 rng(7);
    auto w = random_params(rng);
    auto state = ClientOptState::fresh(w);
    std::vector<double> buf(w.size(), 0.0);
    std::vector<double> ref(w.data());
    const double lr = 0.05, wd = 5e-4, m = 0.9;
    for (int step = 0; step < 5; ++step) {
        const auto g = random_params(rng);
        const auto pg = apply_zmg(g);
        for (std::size_t i = 0; i < buf.size(); ++i) {
            buf[i] = m * buf[i] + pg[i];
            ref[i] = ref[i] * (1.0 - lr * wd) - lr * buf[i];
        }
        auto r = zmg_sgd_step(w, g, state, lr, wd, m);
        w = r.weights;
        state = r.state;
    }
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(w[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("momentum placements agree") {
    std::mt19937_64 rng(9);
    auto w1 = random_params(rng);
    auto w2 = w1;
    auto s1 = ClientOptState::fresh(w1);
    auto s2 = s1;
    for (int step = 0; step < 10; ++step) {
        const auto g = random_params(rng);
        auto a = zmg_sgd_step(w1, g, s1, 0.1, 1e-3, 0.9, MomentumPlacement::ProjectFirst);
        auto b = zmg_sgd_step(w2, g, s2, 0.1, 1e-3, 0.9, MomentumPlacement::ProjectBuffer);
        w1 = a.weights, s1 = a.state, w2 = b.weights, s2 = b.state;
    }
    for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-12));
}

TEST_CASE("zmg_sgd_step errors") {
    ParamSet w({0.0, 0.0}, {LayerLayout::matrix(2, 1, 0)});
    ParamSet bad({1.0, std::nan("")}, w.layouts());
    CHECK_THROWS_AS(zmg_sgd_step(w, bad, ClientOptState::fresh(w), 0.1, 0.0, 0.0), NumericError);
    ParamSet other({1.0, 2.0}, {LayerLayout::bias(2, 0)});
    CHECK_THROWS_AS(zmg_sgd_step(w, other, ClientOptState::fresh(w), 0.1, 0.0, 0.0), LayoutError);
    CHECK_THROWS_AS(zmg_sgd_step(w, w, ClientOptState::fresh(w), 0.0, 0.0, 0.0), NumericError);
    CHECK_THROWS_AS(zmg_sgd_step(w, w, ClientOptState::fresh(w), 0.1, -1.0, 0.0), NumericError);
    CHECK_THROWS_AS(zmg_sgd_step(w, w, ClientOptState::fresh(w), 0.1, 0.0, 1.0), NumericError);
}

TEST_CASE("column sums are conserved without weight decay") {
    std::mt19937_64 rng(13);
    auto w = random_params(rng);
    const auto before = column_sums(w);
    auto state = ClientOptState::fresh(w);
    for (int step = 0; step < 50; ++step) {
        auto r = zmg_sgd_step(w, random_params(rng), state, 0.3, 0.0, 0.9);
        w = r.weights;
        state = r.state;
    }
    const auto after = column_sums(w);
    for (std::size_t c = 0; c < 2; ++c) CHECK(after[c] == doctest::Approx(before[c]).epsilon(1e-12));
}

TEST_CASE("column-constant gradients leave weights unchanged") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_params(rng);
        auto g = random_params(rng);
        for (std::size_t r = 1; r < 3; ++r) {
            for (std::size_t c = 0; c < 2; ++c) g[r * 2 + c] = g[c];
        }
        g[6] = 0.0;  // biases pass through unprojected
        g[7] = 0.0;
        const auto out = zmg_sgd_step(w, g, ClientOptState::fresh(w), 0.2, 0.0, 0.0).weights;
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(out[i] == doctest::Approx(w[i]).epsilon(1e-14));
    }
}

TEST_CASE("sgd_step") {
    ParamSet w({1.0, 1.0}, {LayerLayout::bias(2, 0)});
    CHECK(sgd_step(w, ParamSet::zeros_like(w), 0.3) == w);
    CHECK(sgd_step(w, ParamSet({1.0, -1.0}, w.layouts()), 0.5).data() == std::vector<double>{0.5, 1.5});
    CHECK_THROWS_AS(sgd_step(w, w, 0.0), NumericError);

    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_params(rng);
        auto g = random_params(rng);
        auto state = ClientOptState::fresh(a);
        auto b = a;
        client_step(b, g, state, {0.07, 0.0, 0.0, false, MomentumPlacement::ProjectFirst});
        CHECK(sgd_step(a, g, 0.07) == b);
    }
}

TEST_CASE("aggregation weights") {
    const auto p = AggregationWeights::from_sample_counts({4, 1, 9}, {10, 30, 60});
    CHECK(p.entries()[0].client_id == 1);
    CHECK(p.weight_of(1) == doctest::Approx(0.3));
    CHECK(p.weight_of(4) == doctest::Approx(0.1));
    CHECK(p.weight_of(9) == doctest::Approx(0.6));
    double total = 0.0;
    for (const auto& e : p.entries()) total += e.p;
    CHECK(std::abs(total - 1.0) <= 1e-12);

    CHECK_THROWS_AS(AggregationWeights::from_sample_counts({}, {}), DimensionError);
    CHECK_THROWS_AS(AggregationWeights::from_sample_counts({1, 1}, {3, 3}), DimensionError);
    CHECK_THROWS_AS(AggregationWeights::from_sample_counts({1, 2}, {3, 0}), DimensionError);
    CHECK_THROWS_AS(AggregationWeights({{0, 0.5}, {1, 0.4}}), NumericError);
    CHECK_THROWS_AS(AggregationWeights({{0, 1.5}, {1, -0.5}}), NumericError);
    CHECK_THROWS_AS(p.weight_of(2), DimensionError);
}

TEST_CASE("weighted_average examples") {
    const std::vector<LayerLayout> l{LayerLayout::bias(2, 0)};
    ParamSet a({2.0, 0.0}, l), b({0.0, 4.0}, l);
    auto avg = weighted_average({a, b}, {0, 1}, AggregationWeights({{0, 0.5}, {1, 0.5}}));
    CHECK(avg.data() == std::vector<double>{1.0, 2.0});
    avg = weighted_average({a, b}, {0, 1}, AggregationWeights({{0, 0.25}, {1, 0.75}}));
    CHECK(avg[0] == doctest::Approx(0.5));
    CHECK(avg[1] == doctest::Approx(3.0));

    ParamSet odd({0.1 + 0.2, 1.0 / 3.0}, l);
    CHECK(weighted_average({odd}, {5}, AggregationWeights({{5, 1.0}})) == odd);

    CHECK_THROWS_AS(weighted_average({}, {}, AggregationWeights({{0, 1.0}})), DimensionError);
    CHECK_THROWS_AS(weighted_average({a, b}, {0, 1}, AggregationWeights({{0, 1.0}})), DimensionError);
}

TEST_CASE("weighted_average is order invariant") {
    std::mt19937_64 rng(21);
    std::vector<ParamSet> models;
    std::vector<ClientId> ids{3, 0, 7, 2, 5};
    for (std::size_t i = 0; i < ids.size(); ++i) models.push_back(random_params(rng));
    const auto p = AggregationWeights::from_sample_counts(ids, {5, 17, 3, 11, 8});
    const auto ref = weighted_average(models, ids, p);
    std::vector<std::size_t> perm(ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (int t = 0; t < 20; ++t) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<ParamSet> m2;
        std::vector<ClientId> i2;
        for (auto k : perm) {
            m2.push_back(models[k]);
            i2.push_back(ids[k]);
        }
        CHECK(weighted_average(m2, i2, p) == ref);
    }
    std::vector<double> naive(ref.size(), 0.0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        for (std::size_t i = 0; i < naive.size(); ++i) naive[i] += p.weight_of(ids[k]) * models[k][i];
    }
    for (std::size_t i = 0; i < naive.size(); ++i) CHECK(ref[i] == doctest::Approx(naive[i]).epsilon(1e-15));
}

TEST_CASE("adam_server_step examples") {
    const std::vector<LayerLayout> l{LayerLayout::bias(3, 0)};
    ParamSet w({1.0, -2.0, 0.5}, l);
    auto state = ServerAdamState::zeros(3);
    auto r = adam_server_step(w, ParamSet::zeros_like(w), state, 1.0);
    CHECK(r.weights == w);

    ParamSet g({0.3, -1.5, 2.0}, l);
    r = adam_server_step(w, g, state, 0.7);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r.state.first_moment[i] == doctest::Approx(0.1 * g[i]));
        CHECK(r.state.second_moment[i] == doctest::Approx(0.01 * g[i] * g[i]));
        const double step = 0.7 * 0.1 * g[i] / (0.1 * std::abs(g[i]) + 1e-3);
        CHECK(r.weights[i] == doctest::Approx(w[i] - step).epsilon(1e-14));
    }

    ParamSet one({1.0}, {LayerLayout::bias(1, 0)});
    r = adam_server_step(ParamSet({0.0}, one.layouts()), one, ServerAdamState::zeros(1), 1.0);
    CHECK(r.weights[0] == doctest::Approx(-0.1 / 0.101).epsilon(1e-14));
    CHECK(-r.weights[0] == doctest::Approx(0.990099).epsilon(1e-6));
}

TEST_CASE("adam_server_step reduces to scaled sgd") {
    std::mt19937_64 rng(25);
    const double eps = 1e6;
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_params(rng);
        auto g = random_params(rng);
        // beta1 = beta2 = 0: the step is lr g / (|g| + eps), which differs
        // from (lr / eps) g by exactly (lr / eps) g |g| / (|g| + eps).
        auto r = adam_server_step(w, g, ServerAdamState::zeros(w.size(), 0.0, 0.0, eps), eps * 0.5);
        auto s = sgd_step(w, g, 0.5);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gap = 0.5 * std::abs(g[i]) * std::abs(g[i]) / (std::abs(g[i]) + eps);
            CHECK(std::abs(r.weights[i] - s[i]) <= gap * (1.0 + 1e-6) + 1e-15);
        }
        for (auto& x : g.values()) x *= 1e-3;
        r = adam_server_step(w, g, ServerAdamState::zeros(w.size(), 0.0, 0.0, eps), eps * 0.5);
        s = sgd_step(w, g, 0.5);
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(r.weights[i] - s[i]) <= 1e-9);
    }
}

TEST_CASE("adam state validation") {
    ParamSet w({0.0, 0.0}, {LayerLayout::bias(2, 0)});
    CHECK_THROWS_AS(adam_server_step(w, w, ServerAdamState::zeros(2, 1.0, 0.9), 1.0), NumericError);
    CHECK_THROWS_AS(adam_server_step(w, w, ServerAdamState::zeros(2, 0.9, 0.9, 0.0), 1.0), NumericError);
    CHECK_THROWS_AS(adam_server_step(w, w, ServerAdamState::zeros(3), 1.0), DimensionError);
    CHECK_THROWS_AS(adam_server_step(w, w, ServerAdamState::zeros(2), 0.0), NumericError);
    ParamSet bad({std::nan(""), 0.0}, w.layouts());
    CHECK_THROWS_AS(adam_server_step(w, bad, ServerAdamState::zeros(2), 1.0), NumericError);

    std::mt19937_64 rng(27);
    auto state = ServerAdamState::zeros(2);
    auto cur = w;
    for (int t = 0; t < 100; ++t) {
        ParamSet g({std::normal_distribution<double>(0, 3)(rng), -1e-8}, w.layouts());
        adam_server_step_inplace(cur, g, state, 0.1);
        for (double v : state.second_moment) CHECK(v >= 0.0);
    }
}

TEST_CASE("pseudo_gradient") {
    const std::vector<LayerLayout> l{LayerLayout::bias(2, 0)};
    CHECK(pseudo_gradient(ParamSet({1.0, 2.0}, l), ParamSet({0.5, 3.0}, l)).data() == std::vector<double>{0.5, -1.0});
}
