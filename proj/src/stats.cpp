#include "cuthmm/stats.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "cuthmm/errors.hpp"

namespace cuthmm {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double chi_square_sf(double statistic, double df) {
    if (!(df > 0.0)) throw InvalidArgument("chi-square needs df > 0");
    if (statistic <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

double mean(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("mean of an empty sample");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
    if (values.size() < 2) throw InvalidArgument("variance needs at least two values");
    const double m = mean(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return s / static_cast<double>(values.size() - 1);
}

double ks_statistic_normal(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("KS statistic of an empty sample");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double d = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double f = normal_cdf(values[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

double batch_means_se(std::span<const double> values, int batches) {
    const std::size_t n = values.size();
    if (batches <= 0) batches = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
    if (batches < 2) throw InvalidArgument("batch means need at least two batches");
    const std::size_t size = n / static_cast<std::size_t>(batches);
    if (size == 0) throw InvalidArgument("more batches than values");
    std::vector<double> means(static_cast<std::size_t>(batches));
    for (int b = 0; b < batches; ++b)
        means[static_cast<std::size_t>(b)] = mean(values.subspan(static_cast<std::size_t>(b) * size, size));
    return std::sqrt(variance(means) / static_cast<double>(batches));
}

double trapezoid(std::span<const double> x, std::span<const double> f) {
    if (x.size() != f.size()) throw InvalidArgument("trapezoid: size mismatch");
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
    return s;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples) {
    if (samples.rows() < 2) throw InvalidArgument("covariance needs at least two draws");
    const Eigen::RowVectorXd m = samples.colwise().mean();
    const Eigen::MatrixXd centered = samples.rowwise() - m;
    return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

}  // namespace cuthmm
