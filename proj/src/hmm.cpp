#include "cuthmm/hmm.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cuthmm/errors.hpp"

namespace cuthmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_dimensions(const TransitionMatrix& q, const StateDistribution& initial,
                      const EmissionLogDensityTable& emissions) {
    if (q.states() != initial.states() || q.states() != emissions.states())
        throw InvalidArgument("state count mismatch between Q (" + std::to_string(q.states()) +
                              "), initial law (" + std::to_string(initial.states()) +
                              ") and emission table (" + std::to_string(emissions.states()) + ")");
}

// exp(log f_t(r) - shift_t) with shift_t = max_r log f_t(r).
struct ScaledEmissions {
    RowMatrix values;
    Eigen::VectorXd shift;
};

ScaledEmissions scale_emissions(const EmissionLogDensityTable& emissions) {
    const RowMatrix& logs = emissions.values();
    ScaledEmissions out{RowMatrix(logs.rows(), logs.cols()), Eigen::VectorXd(logs.rows())};
    for (Eigen::Index t = 0; t < logs.rows(); ++t) {
        const double top = logs.row(t).maxCoeff();
        if (top == kNegInf)
            throw ZeroLikelihood("every emission density vanishes at t=" + std::to_string(t));
        out.shift(t) = top;
        out.values.row(t) = (logs.row(t).array() - top).exp();
    }
    return out;
}

}  // namespace

TransitionMatrix::TransitionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() < 1 || entries_.rows() != entries_.cols())
        throw InvalidArgument("transition matrix must be square with at least one state");
    for (Eigen::Index r = 0; r < entries_.rows(); ++r) {
        if ((entries_.row(r).array() < 0.0).any() || !entries_.row(r).allFinite())
            throw InvalidArgument("transition matrix has a negative or non-finite entry in row " +
                                  std::to_string(r));
        if (std::abs(entries_.row(r).sum() - 1.0) > kRowTolerance)
            throw InvalidArgument("transition matrix row " + std::to_string(r) + " does not sum to 1");
    }
}

TransitionMatrix TransitionMatrix::normalized(Eigen::MatrixXd entries) {
    for (Eigen::Index r = 0; r < entries.rows(); ++r) {
        const double s = entries.row(r).sum();
        if (s > 0.0) entries.row(r) /= s;
    }
    return TransitionMatrix(std::move(entries));
}

TransitionMatrix TransitionMatrix::permuted(const std::vector<int>& perm) const {
    const int r = states();
    Eigen::MatrixXd out(r, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) out(i, j) = entries_(perm[i], perm[j]);
    return TransitionMatrix(std::move(out));
}

StateDistribution::StateDistribution(Eigen::VectorXd probs) : probs_(std::move(probs)) {
    if (probs_.size() < 1) throw InvalidArgument("state distribution must be non-empty");
    if ((probs_.array() < 0.0).any() || !probs_.allFinite())
        throw InvalidArgument("state distribution has a negative or non-finite entry");
    if (std::abs(probs_.sum() - 1.0) > kSumTolerance)
        throw InvalidArgument("state distribution does not sum to 1");
}

StateDistribution StateDistribution::uniform(int states) {
    return StateDistribution(Eigen::VectorXd::Constant(states, 1.0 / states));
}

EmissionLogDensityTable::EmissionLogDensityTable(RowMatrix log_values) : values_(std::move(log_values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
        throw InvalidArgument("emission table needs at least one time step and one state");
    for (Eigen::Index t = 0; t < values_.rows(); ++t)
        for (Eigen::Index r = 0; r < values_.cols(); ++r) {
            const double v = values_(t, r);
            if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
                throw InvalidArgument("emission log-density must be finite or -inf");
        }
}

bool is_ergodic(const TransitionMatrix& q) {
    const int r = q.states();
    using BoolMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
    BoolMatrix adj = (q.matrix().array() > 0.0).cast<int>();
    if ((adj.array() > 0).all()) return true;
    // Wielandt: a primitive matrix has A^k > 0 for k = (r - 1)^2 + 1.
    const int k = (r - 1) * (r - 1) + 1;
    BoolMatrix power = adj;
    for (int step = 1; step < k; ++step) {
        power = ((power * adj).array() > 0).cast<int>();
        if ((power.array() > 0).all()) return true;
    }
    return (power.array() > 0).all();
}

StateDistribution stationary_distribution(const TransitionMatrix& q) {
    const int r = q.states();
    if (r == 1) return StateDistribution(Eigen::VectorXd::Ones(1));
    if (!is_ergodic(q)) throw NonErgodic("transition matrix is not irreducible and aperiodic");

    Eigen::MatrixXd system = q.matrix().transpose() - Eigen::MatrixXd::Identity(r, r);
    system.row(r - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
    rhs(r - 1) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
        throw NonErgodic("stationary system is singular");
    Eigen::VectorXd p = lu.solve(rhs);
    p = p.cwiseMax(0.0);
    p /= p.sum();
    if ((p.transpose() * q.matrix() - p.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw NonErgodic("no unique stationary solution within tolerance");
    return StateDistribution(std::move(p));
}

FilterResult forward_filter(const TransitionMatrix& q, const StateDistribution& initial,
                            const EmissionLogDensityTable& emissions) {
    check_dimensions(q, initial, emissions);
    const ScaledEmissions scaled = scale_emissions(emissions);
    return forward_filter_scaled(q, initial, scaled.values, scaled.shift);
}

FilterResult forward_filter_scaled(const TransitionMatrix& q, const StateDistribution& initial,
                                   const RowMatrix& scaled, const Eigen::VectorXd& shift) {
    const int n = static_cast<int>(scaled.rows());
    const int r = q.states();
    if (initial.states() != r || scaled.cols() != r || shift.size() != n)
        throw InvalidArgument("forward_filter_scaled: dimension mismatch");
    const Eigen::MatrixXd& qm = q.matrix();

    FilterResult out{RowMatrix(n, r), Eigen::VectorXd(n), 0.0};
    Eigen::RowVectorXd pred = initial.probs().transpose();
    Eigen::RowVectorXd joint(r);
    for (int t = 0; t < n; ++t) {
        if (t > 0) pred.noalias() = out.filtered.row(t - 1) * qm;
        joint = pred.cwiseProduct(scaled.row(t));
        const double c = joint.sum();
        if (!(c > 0.0)) throw ZeroLikelihood("normalization constant underflowed at t=" + std::to_string(t));
        out.filtered.row(t) = joint / c;
        out.log_norm_constants(t) = std::log(c) + shift(t);
    }
    out.log_likelihood = out.log_norm_constants.sum();
    return out;
}

FilterResult forward_filter(const TransitionMatrix& q, const EmissionLogDensityTable& emissions) {
    return forward_filter(q, stationary_distribution(q), emissions);
}

double log_likelihood(const TransitionMatrix& q, const StateDistribution& initial,
                      const EmissionLogDensityTable& emissions) {
    check_dimensions(q, initial, emissions);
    const RowMatrix& logs = emissions.values();
    const Eigen::MatrixXd& qm = q.matrix();
    Eigen::RowVectorXd pred = initial.probs().transpose();
    Eigen::RowVectorXd joint(q.states());
    double total = 0.0;
    for (Eigen::Index t = 0; t < logs.rows(); ++t) {
        const double top = logs.row(t).maxCoeff();
        if (top == kNegInf) throw ZeroLikelihood("every emission density vanishes at t=" + std::to_string(t));
        joint = pred.array() * (logs.row(t).array() - top).exp();
        const double c = joint.sum();
        if (!(c > 0.0)) throw ZeroLikelihood("normalization constant underflowed at t=" + std::to_string(t));
        total += std::log(c) + top;
        pred = (joint / c) * qm;
    }
    return total;
}

RowMatrix smoothing_probabilities(const TransitionMatrix& q, const StateDistribution& initial,
                                  const EmissionLogDensityTable& emissions) {
    const FilterResult filter = forward_filter(q, initial, emissions);
    const ScaledEmissions scaled = scale_emissions(emissions);
    const Eigen::MatrixXd& qm = q.matrix();
    const int n = emissions.length();
    const int r = q.states();

    RowMatrix smoothed(n, r);
    Eigen::VectorXd beta = Eigen::VectorXd::Ones(r);
    smoothed.row(n - 1) = filter.filtered.row(n - 1);
    for (int t = n - 2; t >= 0; --t) {
        // c_{t+1} in the shifted scale used by the forward pass.
        const double c_next = std::exp(filter.log_norm_constants(t + 1) - scaled.shift(t + 1));
        Eigen::VectorXd weighted = scaled.values.row(t + 1).transpose().cwiseProduct(beta);
        beta = qm * weighted / c_next;
        Eigen::RowVectorXd row = filter.filtered.row(t).cwiseProduct(beta.transpose());
        smoothed.row(t) = row / row.sum();
    }
    return smoothed;
}

RowMatrix smoothing_probabilities(const TransitionMatrix& q, const EmissionLogDensityTable& emissions) {
    return smoothing_probabilities(q, stationary_distribution(q), emissions);
}

LatentPath sample_latent_path(const TransitionMatrix& q, const FilterResult& filter, Rng& rng) {
    const int n = static_cast<int>(filter.filtered.rows());
    const int r = q.states();
    LatentPath path(n);
    std::vector<double> weights(r);
    for (int s = 0; s < r; ++s) weights[s] = filter.filtered(n - 1, s);
    path[n - 1] = categorical_draw(rng, weights);
    for (int t = n - 2; t >= 0; --t) {
        const int next = path[t + 1];
        for (int s = 0; s < r; ++s) weights[s] = filter.filtered(t, s) * q(s, next);
        path[t] = categorical_draw(rng, weights);
    }
    return path;
}

LatentPath sample_latent_path(const TransitionMatrix& q, const StateDistribution& initial,
                              const EmissionLogDensityTable& emissions, Rng& rng) {
    return sample_latent_path(q, forward_filter(q, initial, emissions), rng);
}

SimulatedSeries simulate_hmm(const TransitionMatrix& q, const std::vector<EmissionSampler>& emissions,
                             int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("simulate_hmm needs n >= 1");
    if (static_cast<int>(emissions.size()) != q.states())
        throw InvalidArgument("one emission sampler per state is required");
    const StateDistribution p = stationary_distribution(q);
    const int r = q.states();
    SimulatedSeries out{LatentPath(n), std::vector<double>(n)};
    std::vector<double> weights(p.probs().data(), p.probs().data() + r);
    out.states[0] = categorical_draw(rng, weights);
    for (int t = 1; t < n; ++t) {
        for (int s = 0; s < r; ++s) weights[s] = q(out.states[t - 1], s);
        out.states[t] = categorical_draw(rng, weights);
    }
    for (int t = 0; t < n; ++t) out.observations[t] = emissions[out.states[t]](rng);
    return out;
}

}  // namespace cuthmm
