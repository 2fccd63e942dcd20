#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace cuthmm {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double normal_draw(Rng& rng, double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(rng);
}

inline double gamma_draw(Rng& rng, double shape, double scale = 1.0) {
    return std::gamma_distribution<double>(shape, scale)(rng);
}

// InvGamma(shape, scale): density proportional to x^{-shape-1} exp(-scale/x).
inline double inverse_gamma_draw(Rng& rng, double shape, double scale) {
    return 1.0 / gamma_draw(rng, shape, 1.0 / scale);
}

// Dirichlet draw via normalized gamma variates. Small concentrations can
// underflow every gamma variate to zero; in that case the mass goes to the
// largest log-gamma draw, which is the limit of the normalized vector.
Eigen::VectorXd dirichlet_draw(Rng& rng, const Eigen::Ref<const Eigen::VectorXd>& alpha);

// Index drawn proportionally to nonnegative weights (need not be normalized).
int categorical_draw(Rng& rng, std::span<const double> weights);

}  // namespace cuthmm
