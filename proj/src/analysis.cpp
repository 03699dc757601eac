#include "fedzmg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedzmg/errors.hpp"

namespace fedzmg {

void AccuracySeries::validate() const {
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].first <= points[i - 1].first) {
            throw SeriesError("series '" + algorithm + "': rounds must be strictly increasing (round " +
                              std::to_string(points[i].first) + " follows " + std::to_string(points[i - 1].first) + ")");
        }
    }
}

AccuracySeries moving_average(const AccuracySeries& series, std::size_t window) {
    if (window < 1) throw SeriesError("moving_average: window must be >= 1");
    series.validate();
    if (series.size() < window) {
        throw SeriesError("moving_average: series of " + std::to_string(series.size()) + " points is shorter than window " +
                          std::to_string(window));
    }
    AccuracySeries out{{}, series.algorithm, series.seed};
    out.points.reserve(series.size() - window + 1);
    // Re-summing each window keeps window = 1 an exact identity and avoids
    // drift from a running sum.
    for (std::size_t end = window; end <= series.size(); ++end) {
        double s = 0.0;
        for (std::size_t i = end - window; i < end; ++i) s += series.points[i].second;
        out.points.emplace_back(series.points[end - 1].first,
                                window == 1 ? series.points[end - 1].second : s / static_cast<double>(window));
    }
    return out;
}

std::optional<std::size_t> rounds_to_threshold(const AccuracySeries& series, double theta, std::size_t window,
                                               ThresholdRule rule) {
    if (series.size() < window) return std::nullopt;
    const auto ma = moving_average(series, window);
    if (rule == ThresholdRule::FirstCrossing) {
        for (const auto& [round, v] : ma.points) {
            if (v >= theta) return round;
        }
        return std::nullopt;
    }
    std::optional<std::size_t> result;
    for (auto it = ma.points.rbegin(); it != ma.points.rend(); ++it) {
        if (it->second < theta) break;
        result = it->first;
    }
    return result;
}

double final_accuracy(const AccuracySeries& series, std::size_t last_n) {
    if (last_n < 1) throw SeriesError("final_accuracy: window must be >= 1");
    if (series.size() < last_n) {
        throw SeriesError("final_accuracy: series '" + series.algorithm + "' has " + std::to_string(series.size()) +
                          " points, needs at least " + std::to_string(last_n));
    }
    double s = 0.0;
    for (std::size_t i = series.size() - last_n; i < series.size(); ++i) s += series.points[i].second;
    return s / static_cast<double>(last_n);
}

std::optional<std::map<std::string, double>> post_threshold_average(
    const std::map<std::string, AccuracySeries>& series_by_alg, double theta, std::size_t window,
    ThresholdRule rule) {
    if (series_by_alg.empty()) throw SeriesError("post_threshold_average: no series");
    std::size_t start = 0;
    for (const auto& [alg, s] : series_by_alg) {
        const auto r = rounds_to_threshold(s, theta, window, rule);
        if (!r) return std::nullopt;
        start = std::max(start, *r);
    }
    std::map<std::string, double> out;
    for (const auto& [alg, s] : series_by_alg) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [round, v] : s.points) {
            if (round >= start) {
                sum += v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        out[alg] = sum / static_cast<double>(n);
    }
    return out;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw SeriesError("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw SeriesError("paired_t_test: need at least 2 pairs");

    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DegenerateVarianceError("paired_t_test: differences have zero variance");

    TTestResult r;
    r.n = n;
    r.dof = n - 1;
    r.mean_diff = mean;
    r.std_diff = sd;
    r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double nu = static_cast<double>(r.dof);
    r.p_value = std::clamp(regularized_incomplete_beta(0.5 * nu, 0.5, nu / (nu + r.t_statistic * r.t_statistic)), 0.0, 1.0);
    return r;
}

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw NumericError("incomplete beta: shape parameters must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw NumericError("incomplete beta: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) throw NumericError("student_t_cdf: dof must be > 0");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
    return t >= 0.0 ? 1.0 - tail : tail;
}

}  // namespace fedzmg
