#pragma once

// Evaluation metrics over validation-accuracy series and the paired t-test
// used to compare algorithms across seeds.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedzmg {

struct AccuracySeries {
    std::vector<std::pair<std::size_t, double>> points;  // (round, value)
    std::string algorithm;
    std::uint64_t seed = 0;

    // Throws SeriesError unless rounds are strictly increasing.
    void validate() const;
    std::size_t size() const noexcept { return points.size(); }
};

// Trailing mean over the last `window` points, defined from the window-th
// point onward; each output point keeps the round of its last input.
AccuracySeries moving_average(const AccuracySeries& series, std::size_t window);

enum class ThresholdRule {
    // First round from which the moving average stays >= theta for the rest
    // of the series.
    Consistent,
    // First round at which the moving average reaches theta.
    FirstCrossing,
};

std::optional<std::size_t> rounds_to_threshold(const AccuracySeries& series, double theta, std::size_t window,
                                               ThresholdRule rule = ThresholdRule::Consistent);

// Mean of the last `last_n` values; throws SeriesError if the series is
// shorter.
double final_accuracy(const AccuracySeries& series, std::size_t last_n = 100);

// Mean raw accuracy of every algorithm from the round at which the slowest
// one reaches theta. nullopt when any algorithm never reaches it.
std::optional<std::map<std::string, double>> post_threshold_average(
    const std::map<std::string, AccuracySeries>& series_by_alg, double theta, std::size_t window,
    ThresholdRule rule = ThresholdRule::Consistent);

struct TTestResult {
    double t_statistic = 0.0;
    double p_value = 1.0;  // two-sided
    std::size_t n = 0;
    double mean_diff = 0.0;
    double std_diff = 0.0;  // sample std, divisor n - 1
    std::size_t dof = 0;

    bool significant(double alpha = 0.05) const noexcept { return p_value < alpha; }
};

// Paired t-test on D = a - b: t = mean(D) / (s_D / sqrt(n)).
// Throws SeriesError for n < 2 or mismatched sizes and
// DegenerateVarianceError when s_D == 0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);

}  // namespace fedzmg
