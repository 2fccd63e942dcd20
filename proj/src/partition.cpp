#include "cuthmm/partition.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Dense>

#include "cuthmm/errors.hpp"

namespace cuthmm {

double logistic(double y) {
    if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
    const double e = std::exp(y);
    return e / (1.0 + e);
}

namespace {

double logit(double u) { return std::log(u) - std::log1p(-u); }

}  // namespace

TransformG0 TransformG0::sigmoid_linear() {
    TransformG0 t;
    t.mode_ = Mode::SigmoidLinear;
    const double hi = logistic(kLinearHalfWidth);
    const double lo = logistic(-kLinearHalfWidth);
    // Continuity at both y = -3 and y = 3.
    t.eta_ = (hi - lo) / (2.0 * kLinearHalfWidth);
    t.zeta_ = 0.5 * (hi + lo);
    return t;
}

TransformG0 TransformG0::pure_sigmoid() {
    TransformG0 t;
    t.mode_ = Mode::PureSigmoid;
    t.zeta_ = 0.5;
    t.eta_ = 0.0;
    return t;
}

TransformG0 TransformG0::custom(std::function<double(double)> forward, std::function<double(double)> inverse) {
    if (!forward || !inverse) throw InvalidArgument("custom transform needs forward and inverse maps");
    TransformG0 t;
    t.mode_ = Mode::CustomMonotone;
    t.forward_ = std::move(forward);
    t.inverse_ = std::move(inverse);
    return t;
}

double TransformG0::eval(double y) const {
    if (std::isnan(y)) throw DomainError("G0 evaluated at NaN");
    switch (mode_) {
        case Mode::SigmoidLinear:
            if (std::abs(y) <= kLinearHalfWidth) return zeta_ + eta_ * y;
            return logistic(y);
        case Mode::PureSigmoid:
            return logistic(y);
        case Mode::CustomMonotone:
            return forward_(y);
    }
    return 0.0;
}

double TransformG0::inverse(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("G0 inverse needs u in (0,1), got " + std::to_string(u));
    switch (mode_) {
        case Mode::SigmoidLinear: {
            const double lo = zeta_ - eta_ * kLinearHalfWidth;
            const double hi = zeta_ + eta_ * kLinearHalfWidth;
            if (u >= lo && u <= hi) return (u - zeta_) / eta_;
            return logit(u);
        }
        case Mode::PureSigmoid:
            return logit(u);
        case Mode::CustomMonotone:
            return inverse_(u);
    }
    return 0.0;
}

std::string to_string(TransformG0::Mode mode) {
    switch (mode) {
        case TransformG0::Mode::SigmoidLinear: return "sigmoid-linear";
        case TransformG0::Mode::PureSigmoid: return "pure-sigmoid";
        case TransformG0::Mode::CustomMonotone: return "custom-monotone";
    }
    return "unknown";
}

TransformG0::Mode transform_mode_from_string(const std::string& name) {
    if (name == "sigmoid-linear") return TransformG0::Mode::SigmoidLinear;
    if (name == "pure-sigmoid") return TransformG0::Mode::PureSigmoid;
    if (name == "custom-monotone") return TransformG0::Mode::CustomMonotone;
    throw ConfigError("unknown transform mode '" + name + "'");
}

DyadicPartition::DyadicPartition(TransformG0 transform, int level)
    : transform_(std::move(transform)), level_(level) {
    if (level < 1 || level > 30) throw InvalidArgument("partition level must lie in [1, 30]");
    const int kappa = 1 << level;
    edges_.resize(kappa + 1);
    edges_.front() = -std::numeric_limits<double>::infinity();
    edges_.back() = std::numeric_limits<double>::infinity();
    for (int m = 1; m < kappa; ++m) edges_[m] = transform_.inverse(std::ldexp(static_cast<double>(m), -level));
}

double DyadicPartition::unit_width() const { return std::ldexp(1.0, -level_); }

int DyadicPartition::bin_of(double y) const {
    // Scaling by 2^M is exact, so bins at level M are floor(bin_{M+1} / 2).
    const double u = transform_.eval(y);
    const int kappa = bins();
    const int m = static_cast<int>(std::floor(std::ldexp(u, level_)));
    if (m < 0) return 0;
    if (m >= kappa) return kappa - 1;
    return m;
}

DyadicPartition build_partition(const TransformG0& transform, int level) {
    return DyadicPartition(transform, level);
}

CoarsenedSeries coarsen(const DyadicPartition& partition, std::span<const double> y) {
    CoarsenedSeries out(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) out[t] = partition.bin_of(y[t]);
    return out;
}

AdmissibilityReport admissibility_check(const DyadicPartition& partition, const std::vector<CdfFunction>& cdfs) {
    const int r = static_cast<int>(cdfs.size());
    const int kappa = partition.bins();
    if (r < 1) throw InvalidArgument("admissibility_check needs at least one CDF");
    Eigen::MatrixXd probs(r, kappa);
    const auto& edges = partition.edges();
    for (int s = 0; s < r; ++s) {
        double prev = 0.0;
        for (int m = 0; m < kappa; ++m) {
            const double next = (m + 1 == kappa) ? 1.0 : cdfs[s](edges[m + 1]);
            probs(s, m) = next - prev;
            prev = next;
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(probs);
    const Eigen::VectorXd sv = svd.singularValues();
    AdmissibilityReport report;
    report.singular_values.assign(sv.data(), sv.data() + sv.size());
    const double tol = 1e-12 * std::max(1.0, sv(0));
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++report.rank;
    const double smallest = sv(sv.size() - 1);
    report.condition_number = smallest > 0.0 ? sv(0) / smallest : std::numeric_limits<double>::infinity();
    report.admissible = report.rank == r;
    return report;
}

}  // namespace cuthmm
