#include "cuthmm/random.hpp"

#include <cmath>
#include <limits>

#include "cuthmm/errors.hpp"

namespace cuthmm {

namespace {

// log of a Gamma(shape, 1) variate; for shape < 1 uses
// Gamma(a) = Gamma(a + 1) * U^{1/a} so tiny shapes stay representable.
double log_gamma_variate(Rng& rng, double shape) {
    if (shape >= 1.0) return std::log(gamma_draw(rng, shape));
    const double g = gamma_draw(rng, shape + 1.0);
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    return std::log(g) + std::log(u) / shape;
}

}  // namespace

Eigen::VectorXd dirichlet_draw(Rng& rng, const Eigen::Ref<const Eigen::VectorXd>& alpha) {
    const Eigen::Index k = alpha.size();
    if (k == 0) throw InvalidArgument("dirichlet_draw: empty concentration vector");
    Eigen::VectorXd logs(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!(alpha(i) > 0.0)) throw InvalidArgument("dirichlet_draw: concentrations must be positive");
        logs(i) = log_gamma_variate(rng, alpha(i));
    }
    const double top = logs.maxCoeff();
    Eigen::VectorXd out = (logs.array() - top).exp();
    out /= out.sum();
    return out;
}

int categorical_draw(Rng& rng, std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0) || !std::isfinite(total))
        throw InvalidArgument("categorical_draw: weights must have positive finite sum");
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return static_cast<int>(i);
    }
    // Rounding can leave u == total; return the last positive-weight index.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return static_cast<int>(i);
    return static_cast<int>(weights.size()) - 1;
}

}  // namespace cuthmm
