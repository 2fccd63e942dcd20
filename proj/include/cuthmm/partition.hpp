#pragma once

// Dyadic partitions of the real line induced by a monotone transform
// G0: R -> (0, 1). Bin m (0-based) is the preimage of [m 2^-M, (m+1) 2^-M).

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cuthmm {

class TransformG0 {
public:
    enum class Mode { SigmoidLinear, PureSigmoid, CustomMonotone };

    /// Logistic tails with a linear piece on |y| <= 3 whose intercept and
    /// slope make the transform continuous.
    static TransformG0 sigmoid_linear();
    static TransformG0 pure_sigmoid();
    /// Caller guarantees `forward` is continuous, strictly increasing onto
    /// (0, 1) and that `inverse` is its inverse.
    static TransformG0 custom(std::function<double(double)> forward, std::function<double(double)> inverse);

    Mode mode() const { return mode_; }
    double zeta() const { return zeta_; }
    double eta() const { return eta_; }

    double eval(double y) const;
    /// Throws DomainError unless 0 < u < 1.
    double inverse(double u) const;

    static constexpr double kLinearHalfWidth = 3.0;

private:
    Mode mode_ = Mode::SigmoidLinear;
    double zeta_ = 0.5;
    double eta_ = 0.0;
    std::function<double(double)> forward_;
    std::function<double(double)> inverse_;
};

std::string to_string(TransformG0::Mode mode);
TransformG0::Mode transform_mode_from_string(const std::string& name);

double logistic(double y);

class DyadicPartition {
public:
    DyadicPartition(TransformG0 transform, int level);

    int level() const { return level_; }
    int bins() const { return static_cast<int>(edges_.size()) - 1; }
    const TransformG0& transform() const { return transform_; }
    /// kappa + 1 edges, first -inf, last +inf.
    const std::vector<double>& edges() const { return edges_; }
    /// Width of every bin in transformed space, 2^-M.
    double unit_width() const;

    int bin_of(double y) const;

private:
    TransformG0 transform_;
    int level_;
    std::vector<double> edges_;
};

DyadicPartition build_partition(const TransformG0& transform, int level);

/// Bin indices of observations; each index in [0, kappa).
using CoarsenedSeries = std::vector<int>;

CoarsenedSeries coarsen(const DyadicPartition& partition, std::span<const double> y);

struct AdmissibilityReport {
    int rank = 0;
    double condition_number = 0.0;
    bool admissible = false;
    std::vector<double> singular_values;
};

using CdfFunction = std::function<double(double)>;

/// Rank of the R x kappa matrix of per-state bin probabilities F_r(I_m).
AdmissibilityReport admissibility_check(const DyadicPartition& partition, const std::vector<CdfFunction>& cdfs);

}  // namespace cuthmm
