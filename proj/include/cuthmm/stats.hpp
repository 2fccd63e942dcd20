#pragma once

// Small statistical helpers shared by diagnostics and tests.

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cuthmm {

double normal_cdf(double x);
double normal_quantile(double p);

/// Upper tail P(chi2_df > statistic).
double chi_square_sf(double statistic, double df);

double mean(std::span<const double> values);
/// Unbiased sample variance.
double variance(std::span<const double> values);

/// Kolmogorov-Smirnov distance between the empirical law of `values` and N(0, 1).
double ks_statistic_normal(std::vector<double> values);

/// Standard error of the mean by non-overlapping batch means.
/// `batches` defaults to floor(sqrt(size)).
double batch_means_se(std::span<const double> values, int batches = 0);

/// Trapezoid rule for samples `f` on the increasing abscissae `x`.
double trapezoid(std::span<const double> x, std::span<const double> f);

/// Sample covariance of the rows of `samples` (draws x dims), divisor draws - 1.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples);

}  // namespace cuthmm
