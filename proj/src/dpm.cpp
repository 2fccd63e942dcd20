#include "cuthmm/dpm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "cuthmm/errors.hpp"

namespace cuthmm {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

LatentPath quantile_split_path(std::span<const double> y, int states) {
    const std::size_t n = y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
    LatentPath x(n);
    for (std::size_t rank = 0; rank < n; ++rank)
        x[order[rank]] = static_cast<int>((rank * static_cast<std::size_t>(states)) / n);
    return x;
}

// Unnormalized composite emission weights W(j, r) phi_{v_r}(y - mu(j, r)) for
// one observation, scaled by exp(shift). Returns the shift.
double composite_weights(const DpmEmissionState& state, double y, double* out) {
    const int r_count = state.states();
    const int s_count = state.components();
    double shift = std::numeric_limits<double>::infinity();
    for (int r = 0; r < r_count; ++r) {
        const double inv2v = 0.5 / state.v(r);
        const double log_norm = 0.5 * (kLogTwoPi + std::log(state.v(r)));
        const double* mu = state.mu.col(r).data();
        double* dst = out + static_cast<std::ptrdiff_t>(r) * s_count;
        for (int j = 0; j < s_count; ++j) {
            const double d = y - mu[j];
            dst[j] = d * d * inv2v + log_norm;
            shift = std::min(shift, dst[j]);
        }
    }
    for (int r = 0; r < r_count; ++r) {
        const double* w = state.w.col(r).data();
        double* dst = out + static_cast<std::ptrdiff_t>(r) * s_count;
        for (int j = 0; j < s_count; ++j) dst[j] = w[j] * std::exp(shift - dst[j]);
    }
    return -shift;
}

double log_dirichlet(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& alpha) {
    double out = std::lgamma(alpha.sum());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out -= std::lgamma(alpha(i));
        if (alpha(i) != 1.0) out += (alpha(i) - 1.0) * std::log(std::max(x(i), 1e-300));
    }
    return out;
}

void check_series(std::span<const double> y) {
    if (y.empty()) throw InvalidArgument("observation series is empty");
    for (double v : y)
        if (!std::isfinite(v)) throw InvalidArgument("observations must be finite");
}

}  // namespace

void DpmHyper::validate() const {
    if (!(concentration > 0.0 && sigma_c2 > 0.0 && alpha_sigma > 0.0 && beta_sigma > 0.0))
        throw ConfigError("DPM hyperparameters must be positive");
    if (s_max < 0) throw ConfigError("s_max must be >= 1 (or 0 for the default)");
}

int DpmHyper::truncation(int n) const {
    if (s_max > 0) return s_max;
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n)))));
}

void NestedConfig::validate() const {
    if (interior_iterations < 1) throw ConfigError("interior iterations C must be >= 1");
}

void FullBayesConfig::validate() const {
    if (!(iterations > burn_in && burn_in >= 0)) throw ConfigError("need iterations > burn_in >= 0");
    if (thin < 1) throw ConfigError("thin must be >= 1");
}

Eigen::VectorXd DpmDraw::state_means() const { return (w.cwiseProduct(mu)).colwise().sum().transpose(); }

DpmDraw DpmDraw::permuted(const std::vector<int>& perm) const {
    DpmDraw out{permute_columns(mu, perm), Eigen::VectorXd(v.size()), permute_columns(w, perm)};
    for (Eigen::Index r = 0; r < v.size(); ++r) out.v(r) = v(perm[r]);
    return out;
}

DpmDraw snapshot(const DpmEmissionState& state) { return {state.mu, state.v, state.w}; }

std::vector<double> default_grid(std::span<const double> y, int points) {
    check_series(y);
    if (points < 2) throw InvalidArgument("grid needs at least two points");
    const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
    const double n = static_cast<double>(y.size());
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    const double sd = y.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 1.0;
    const double lo = *lo_it - 3.0 * sd;
    const double hi = *hi_it + 3.0 * sd;
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i) grid[i] = lo + (hi - lo) * i / (points - 1);
    return grid;
}

RowMatrix density_eval(const DpmDraw& draw, std::span<const double> grid) {
    const Eigen::Index r_count = draw.mu.cols();
    RowMatrix out = RowMatrix::Zero(r_count, static_cast<Eigen::Index>(grid.size()));
    for (Eigen::Index r = 0; r < r_count; ++r) {
        const double v = draw.v(r);
        const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * v);
        for (std::size_t g = 0; g < grid.size(); ++g) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < draw.mu.rows(); ++j) {
                const double d = grid[g] - draw.mu(j, r);
                acc += draw.w(j, r) * std::exp(-0.5 * d * d / v);
            }
            out(r, static_cast<Eigen::Index>(g)) = norm * acc;
        }
    }
    return out;
}

EmissionLogDensityTable mixture_log_density_table(const DpmDraw& draw, std::span<const double> y) {
    const Eigen::Index r_count = draw.mu.cols();
    const Eigen::Index s_count = draw.mu.rows();
    RowMatrix table(static_cast<Eigen::Index>(y.size()), r_count);
    std::vector<double> terms(static_cast<std::size_t>(s_count));
    for (std::size_t t = 0; t < y.size(); ++t)
        for (Eigen::Index r = 0; r < r_count; ++r) {
            const double v = draw.v(r);
            double top = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < s_count; ++j) {
                const double d = y[t] - draw.mu(j, r);
                const double w = draw.w(j, r);
                terms[j] = w > 0.0 ? std::log(w) - 0.5 * d * d / v : -std::numeric_limits<double>::infinity();
                top = std::max(top, terms[j]);
            }
            double acc = 0.0;
            for (Eigen::Index j = 0; j < s_count; ++j) acc += std::exp(terms[j] - top);
            table(static_cast<Eigen::Index>(t), r) = top + std::log(acc) - 0.5 * (kLogTwoPi + std::log(v));
        }
    return EmissionLogDensityTable(std::move(table));
}

DpmEmissionState initial_dpm_state(std::span<const double> y, int states, const DpmHyper& hyper, Rng& rng) {
    check_series(y);
    hyper.validate();
    const int n = static_cast<int>(y.size());
    const int s_count = hyper.truncation(n);
    DpmEmissionState state;
    state.x = quantile_split_path(y, states);
    state.mu.resize(s_count, states);
    state.v.resize(states);
    state.w.resize(s_count, states);
    const Eigen::VectorXd alpha = Eigen::VectorXd::Constant(s_count, hyper.concentration / s_count);
    for (int r = 0; r < states; ++r) {
        state.v(r) = inverse_gamma_draw(rng, hyper.alpha_sigma, hyper.beta_sigma);
        state.w.col(r) = dirichlet_draw(rng, alpha);
        for (int j = 0; j < s_count; ++j) state.mu(j, r) = normal_draw(rng, hyper.mu_c, std::sqrt(hyper.sigma_c2));
    }
    state.s.resize(n);
    std::vector<double> weights(s_count);
    for (int t = 0; t < n; ++t) {
        const int r = state.x[t];
        for (int j = 0; j < s_count; ++j) weights[j] = state.w(j, r);
        state.s[t] = categorical_draw(rng, weights);
    }
    return state;
}

FilterResult composite_forward_filter(const DpmEmissionState& state, const TransitionMatrix& q,
                                      const StateDistribution& initial, std::span<const double> y) {
    const int n = static_cast<int>(y.size());
    const int r_count = state.states();
    const int s_count = state.components();
    const int k = r_count * s_count;
    if (q.states() != r_count || initial.states() != r_count)
        throw InvalidArgument("composite filter: state count mismatch");

    FilterResult out{RowMatrix(n, k), Eigen::VectorXd(n), 0.0};
    Eigen::VectorXd pred = initial.probs();
    Eigen::VectorXd marginal(r_count);
    const Eigen::MatrixXd& qm = q.matrix();
    for (int t = 0; t < n; ++t) {
        double* alpha = out.filtered.row(t).data();
        const double log_scale = composite_weights(state, y[t], alpha);
        if (t > 0) pred = qm.transpose() * marginal;
        double c = 0.0;
        for (int r = 0; r < r_count; ++r) {
            double* block = alpha + static_cast<std::ptrdiff_t>(r) * s_count;
            for (int j = 0; j < s_count; ++j) {
                block[j] *= pred(r);
                c += block[j];
            }
        }
        if (!(c > 0.0)) throw ZeroLikelihood("composite normalization underflowed at t=" + std::to_string(t));
        const double inv = 1.0 / c;
        for (int r = 0; r < r_count; ++r) {
            double* block = alpha + static_cast<std::ptrdiff_t>(r) * s_count;
            double sum = 0.0;
            for (int j = 0; j < s_count; ++j) {
                block[j] *= inv;
                sum += block[j];
            }
            marginal(r) = sum;
        }
        out.log_norm_constants(t) = std::log(c) + log_scale;
    }
    out.log_likelihood = out.log_norm_constants.sum();
    return out;
}

FilterResult composite_forward_filter_reference(const DpmEmissionState& state, const TransitionMatrix& q,
                                                const StateDistribution& initial, std::span<const double> y) {
    const int r_count = state.states();
    const int s_count = state.components();
    const int k = r_count * s_count;
    Eigen::MatrixXd trans(k, k);
    Eigen::VectorXd init(k);
    for (int r = 0; r < r_count; ++r)
        for (int j = 0; j < s_count; ++j) {
            init(r * s_count + j) = initial[r] * state.w(j, r);
            for (int r2 = 0; r2 < r_count; ++r2)
                for (int j2 = 0; j2 < s_count; ++j2) trans(r * s_count + j, r2 * s_count + j2) = q(r, r2) * state.w(j2, r2);
        }
    RowMatrix logs(static_cast<Eigen::Index>(y.size()), k);
    for (std::size_t t = 0; t < y.size(); ++t)
        for (int r = 0; r < r_count; ++r)
            for (int j = 0; j < s_count; ++j) {
                const double d = y[t] - state.mu(j, r);
                logs(static_cast<Eigen::Index>(t), r * s_count + j) =
                    -0.5 * (kLogTwoPi + std::log(state.v(r))) - 0.5 * d * d / state.v(r);
            }
    return forward_filter(TransitionMatrix::normalized(std::move(trans)), StateDistribution(init / init.sum()),
                          EmissionLogDensityTable(std::move(logs)));
}

void sample_allocations(DpmEmissionState& state, const TransitionMatrix& q, const StateDistribution& initial,
                        std::span<const double> y, Rng& rng) {
    const FilterResult filter = composite_forward_filter(state, q, initial, y);
    const int n = static_cast<int>(y.size());
    const int r_count = state.states();
    const int s_count = state.components();
    const int k = r_count * s_count;
    state.x.resize(n);
    state.s.resize(n);

    std::vector<double> weights(k);
    auto draw_at = [&](int t, const double* row) {
        const int idx = categorical_draw(rng, std::span<const double>(row, static_cast<std::size_t>(k)));
        state.x[t] = idx / s_count;
        state.s[t] = idx % s_count;
    };
    draw_at(n - 1, filter.filtered.row(n - 1).data());
    for (int t = n - 2; t >= 0; --t) {
        // W(j', r') of the next composite state does not depend on (r, j).
        const double* row = filter.filtered.row(t).data();
        const int next = state.x[t + 1];
        for (int r = 0; r < r_count; ++r) {
            const double factor = q(r, next);
            for (int j = 0; j < s_count; ++j) weights[r * s_count + j] = row[r * s_count + j] * factor;
        }
        draw_at(t, weights.data());
    }
}

namespace {

DpmEmissionState sweep_with_initial(DpmEmissionState state, const TransitionMatrix& q, const StateDistribution& initial,
                                    std::span<const double> y, const DpmHyper& hyper, Rng& rng) {
    const int n = static_cast<int>(y.size());
    const int r_count = state.states();
    const int s_count = state.components();

    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(s_count, r_count);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(s_count, r_count);
    for (int t = 0; t < n; ++t) {
        counts(state.s[t], state.x[t]) += 1.0;
        sums(state.s[t], state.x[t]) += y[t];
    }

    // Locations: conjugate normal given allocations and the current variance.
    const double prior_prec = 1.0 / hyper.sigma_c2;
    for (int r = 0; r < r_count; ++r)
        for (int j = 0; j < s_count; ++j) {
            const double prec = prior_prec + counts(j, r) / state.v(r);
            const double mean = (hyper.mu_c * prior_prec + sums(j, r) / state.v(r)) / prec;
            state.mu(j, r) = normal_draw(rng, mean, std::sqrt(1.0 / prec));
        }

    // Variances: inverse gamma given the new locations.
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(r_count);
    Eigen::VectorXd n_state = counts.colwise().sum().transpose();
    for (int t = 0; t < n; ++t) {
        const double d = y[t] - state.mu(state.s[t], state.x[t]);
        ss(state.x[t]) += d * d;
    }
    for (int r = 0; r < r_count; ++r)
        state.v(r) = inverse_gamma_draw(rng, hyper.alpha_sigma + 0.5 * n_state(r), hyper.beta_sigma + 0.5 * ss(r));

    // Weights: Dirichlet-multinomial truncation.
    const double pseudo = hyper.concentration / s_count;
    for (int r = 0; r < r_count; ++r)
        state.w.col(r) = dirichlet_draw(rng, (counts.col(r).array() + pseudo).matrix());

    sample_allocations(state, q, initial, y, rng);
    return state;
}

}  // namespace

DpmEmissionState interior_sweep(DpmEmissionState state, const TransitionMatrix& q, std::span<const double> y,
                                const DpmHyper& hyper, Rng& rng) {
    const StateDistribution initial = q.states() == 1 ? StateDistribution::uniform(1) : stationary_distribution(q);
    return sweep_with_initial(std::move(state), q, initial, y, hyper, rng);
}

NestedResult nested_run(const DrawStore& q_draws, std::span<const double> y, const DpmHyper& hyper,
                        const NestedConfig& config, std::span<const double> grid) {
    check_series(y);
    hyper.validate();
    config.validate();
    if (q_draws.empty()) throw InvalidArgument("nested_run needs at least one transition draw");
    const int states = static_cast<int>(q_draws.q.front().rows());

    Rng rng(config.seed);
    DpmEmissionState state = initial_dpm_state(y, states, hyper, rng);
    NestedResult out;
    out.s_max = state.components();
    out.draws.reserve(q_draws.size());
    for (const Eigen::MatrixXd& qm : q_draws.q) {
        const TransitionMatrix q = TransitionMatrix::normalized(qm);
        const StateDistribution initial = states == 1 ? StateDistribution::uniform(1) : stationary_distribution(q);
        for (int c = 0; c < config.interior_iterations; ++c)
            state = sweep_with_initial(std::move(state), q, initial, y, hyper, rng);
        out.draws.push_back(snapshot(state));
    }
    std::vector<double> own_grid;
    if (grid.empty()) {
        own_grid = default_grid(y);
        grid = own_grid;
    }
    out.densities.grid.assign(grid.begin(), grid.end());
    out.densities.values.reserve(out.draws.size());
    for (const DpmDraw& d : out.draws) out.densities.values.push_back(density_eval(d, grid));
    return out;
}

std::vector<Band> pointwise_bands(const DensityGridDraws& draws, double level) {
    if (draws.draws() < 2) throw InvalidArgument("pointwise bands need at least two draws");
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("band level must lie in (0,1)");
    const Eigen::Index r_count = draws.values.front().rows();
    const Eigen::Index g_count = static_cast<Eigen::Index>(draws.grid.size());
    const double tail = 0.5 * (1.0 - level);
    std::vector<Band> out(static_cast<std::size_t>(r_count));
    std::vector<double> column(draws.draws());
    for (Eigen::Index r = 0; r < r_count; ++r) {
        Band& band = out[static_cast<std::size_t>(r)];
        band.mean.resize(g_count);
        band.lower.resize(g_count);
        band.upper.resize(g_count);
        for (Eigen::Index g = 0; g < g_count; ++g) {
            for (std::size_t d = 0; d < draws.draws(); ++d) column[d] = draws.values[d](r, g);
            band.mean(g) = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size());
            band.lower(g) = empirical_quantile(column, tail);
            band.upper(g) = empirical_quantile(column, 1.0 - tail);
        }
    }
    return out;
}

double dpm_log_posterior(const TransitionMatrix& q, const DpmDraw& draw, std::span<const double> y,
                         const DpmHyper& hyper, const Eigen::MatrixXd& transition_prior) {
    const int r_count = q.states();
    const Eigen::Index s_count = draw.mu.rows();
    double out = log_likelihood(q, StateDistribution::uniform(r_count), mixture_log_density_table(draw, y));
    for (int i = 0; i < r_count; ++i)
        out += log_dirichlet(q.matrix().row(i).transpose(), transition_prior.row(i).transpose());
    const Eigen::VectorXd alpha = Eigen::VectorXd::Constant(s_count, hyper.concentration / static_cast<double>(s_count));
    for (int r = 0; r < r_count; ++r) {
        out += log_dirichlet(draw.w.col(r), alpha);
        for (Eigen::Index j = 0; j < s_count; ++j) {
            const double d = draw.mu(j, r) - hyper.mu_c;
            out += -0.5 * d * d / hyper.sigma_c2;
        }
        const double v = draw.v(r);
        out += -(hyper.alpha_sigma + 1.0) * std::log(v) - hyper.beta_sigma / v;
    }
    return out;
}

FullBayesResult full_bayes_run(std::span<const double> y, int states, const DpmHyper& hyper,
                               const Eigen::MatrixXd& transition_prior, const FullBayesConfig& config,
                               std::span<const double> grid) {
    check_series(y);
    hyper.validate();
    config.validate();
    if (transition_prior.rows() != states || transition_prior.cols() != states || (transition_prior.array() <= 0.0).any())
        throw InvalidArgument("transition prior must be a positive R x R matrix");

    Rng rng(config.seed);
    DpmEmissionState state = initial_dpm_state(y, states, hyper, rng);
    const StateDistribution initial = StateDistribution::uniform(states);
    FullBayesResult out;
    out.s_max = state.components();
    out.store.seed = config.seed;
    out.store.states = states;
    out.store.config = Pi1Config{config.iterations, config.burn_in, config.thin, config.seed};

    for (long it = 1; it <= config.iterations; ++it) {
        const LatentPath& x = state.x;
        Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(states, states);
        for (std::size_t t = 1; t < x.size(); ++t) trans(x[t - 1], x[t]) += 1.0;
        Eigen::MatrixXd qm(states, states);
        for (int i = 0; i < states; ++i)
            qm.row(i) = dirichlet_draw(rng, (transition_prior.row(i) + trans.row(i)).transpose()).transpose();
        const TransitionMatrix q = TransitionMatrix::normalized(std::move(qm));
        state = sweep_with_initial(std::move(state), q, initial, y, hyper, rng);
        if (it > config.burn_in && (it - config.burn_in) % config.thin == 0) {
            DpmDraw draw = snapshot(state);
            const double lp = dpm_log_posterior(q, draw, y, hyper, transition_prior);
            out.store.push_back(q.matrix(), draw.state_means().transpose(), lp, it);
            out.draws.push_back(std::move(draw));
        }
    }
    out.store = relabel_draws(std::move(out.store));
    for (std::size_t i = 0; i < out.draws.size(); ++i) out.draws[i] = out.draws[i].permuted(out.store.relabeling[i]);

    std::vector<double> own_grid;
    if (grid.empty()) {
        own_grid = default_grid(y);
        grid = own_grid;
    }
    out.densities.grid.assign(grid.begin(), grid.end());
    for (const DpmDraw& d : out.draws) out.densities.values.push_back(density_eval(d, grid));
    return out;
}

}  // namespace cuthmm
