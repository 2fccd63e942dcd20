#include "cuthmm/histogram_gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cuthmm/errors.hpp"

namespace cuthmm {

namespace {

double log_dirichlet_density(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& alpha) {
    double out = std::lgamma(alpha.sum());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out -= std::lgamma(alpha(i));
        if (alpha(i) != 1.0) out += (alpha(i) - 1.0) * std::log(x(i));
    }
    return out;
}

}  // namespace

DirichletHyper DirichletHyper::uniform(int states, int bins, double value) {
    return {Eigen::MatrixXd::Constant(states, states, value), Eigen::MatrixXd::Constant(bins, states, value)};
}

void DirichletHyper::validate(int states, int bins) const {
    if (gamma.rows() != states || gamma.cols() != states)
        throw InvalidArgument("gamma must be " + std::to_string(states) + "x" + std::to_string(states));
    if (beta.rows() != bins || beta.cols() != states)
        throw InvalidArgument("beta must be " + std::to_string(bins) + "x" + std::to_string(states));
    if ((gamma.array() <= 0.0).any() || (beta.array() <= 0.0).any())
        throw InvalidArgument("Dirichlet hyperparameters must be positive");
}

void Pi1Config::validate() const {
    if (!(iterations > burn_in && burn_in >= 0)) throw ConfigError("need iterations > burn_in >= 0");
    if (thin < 1) throw ConfigError("thin must be >= 1");
}

void DrawStore::push_back(Eigen::MatrixXd q_draw, Eigen::MatrixXd omega_draw, double log_post, long iter) {
    const int r = static_cast<int>(q_draw.rows());
    q.push_back(std::move(q_draw));
    omega.push_back(std::move(omega_draw));
    log_posterior.push_back(log_post);
    iteration.push_back(iter);
    std::vector<int> identity(r);
    std::iota(identity.begin(), identity.end(), 0);
    relabeling.push_back(std::move(identity));
}

SufficientCounts sufficient_counts(const LatentPath& x, const CoarsenedSeries& bins, int states, int kappa) {
    if (x.size() != bins.size()) throw InvalidArgument("latent path and coarsened series differ in length");
    SufficientCounts out{Eigen::MatrixXd::Zero(states, states), Eigen::MatrixXd::Zero(kappa, states)};
    for (std::size_t t = 0; t < x.size(); ++t) {
        out.bin_counts(bins[t], x[t]) += 1.0;
        if (t > 0) out.transitions(x[t - 1], x[t]) += 1.0;
    }
    return out;
}

EmissionLogDensityTable multinomial_emission_table(const Eigen::MatrixXd& omega, const CoarsenedSeries& bins) {
    const Eigen::Index r = omega.cols();
    const Eigen::MatrixXd log_omega = omega.array().log();
    RowMatrix table(static_cast<Eigen::Index>(bins.size()), r);
    for (std::size_t t = 0; t < bins.size(); ++t) table.row(static_cast<Eigen::Index>(t)) = log_omega.row(bins[t]);
    return EmissionLogDensityTable(std::move(table));
}

StateDistribution sampler_initial_law(int states) { return StateDistribution::uniform(states); }

Pi1State gibbs_sweep(Pi1State state, const CoarsenedSeries& bins, int kappa, const DirichletHyper& hyper, Rng& rng) {
    const int r = static_cast<int>(hyper.gamma.rows());
    const SufficientCounts counts = sufficient_counts(state.x, bins, r, kappa);

    Eigen::MatrixXd q(r, r);
    for (int i = 0; i < r; ++i)
        q.row(i) = dirichlet_draw(rng, (hyper.gamma.row(i) + counts.transitions.row(i)).transpose()).transpose();
    state.q = TransitionMatrix::normalized(std::move(q));

    state.omega.resize(kappa, r);
    for (int i = 0; i < r; ++i) state.omega.col(i) = dirichlet_draw(rng, hyper.beta.col(i) + counts.bin_counts.col(i));

    if (!bins.empty()) {
        // Scaling depends only on the bin, so it is done once per bin.
        const Eigen::ArrayXXd log_omega = state.omega.array().log();
        RowMatrix bin_scaled(kappa, r);
        Eigen::VectorXd bin_shift(kappa);
        for (int m = 0; m < kappa; ++m) {
            bin_shift(m) = log_omega.row(m).maxCoeff();
            bin_scaled.row(m) = (log_omega.row(m) - bin_shift(m)).exp();
        }
        const auto n = static_cast<Eigen::Index>(bins.size());
        RowMatrix scaled(n, r);
        Eigen::VectorXd shift(n);
        for (Eigen::Index t = 0; t < n; ++t) {
            const int m = bins[static_cast<std::size_t>(t)];
            if (bin_shift(m) == -std::numeric_limits<double>::infinity())
                throw ZeroLikelihood("every bin weight vanishes for bin " + std::to_string(m));
            scaled.row(t) = bin_scaled.row(m);
            shift(t) = bin_shift(m);
        }
        state.x = sample_latent_path(state.q, forward_filter_scaled(state.q, sampler_initial_law(r), scaled, shift), rng);
    }
    return state;
}

LatentPath initial_latent_path(const CoarsenedSeries& bins, int states, int kappa, Rng& rng) {
    const std::size_t n = bins.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bins[a] < bins[b]; });

    // freq(m, r): how often the rank-based quantile split puts bin m in state r.
    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(kappa, states);
    for (std::size_t rank = 0; rank < n; ++rank) {
        const int group = static_cast<int>((rank * static_cast<std::size_t>(states)) / n);
        freq(bins[order[rank]], group) += 1.0;
    }
    LatentPath x(n);
    std::vector<double> w(states);
    for (std::size_t t = 0; t < n; ++t) {
        for (int s = 0; s < states; ++s) w[s] = freq(bins[t], s);
        x[t] = categorical_draw(rng, w);
    }
    return x;
}

double log_posterior(const TransitionMatrix& q, const Eigen::MatrixXd& omega, const CoarsenedSeries& bins,
                     const DirichletHyper& hyper) {
    const int r = q.states();
    double out = 0.0;
    if (!bins.empty()) out += log_likelihood(q, sampler_initial_law(r), multinomial_emission_table(omega, bins));
    for (int i = 0; i < r; ++i) out += log_dirichlet_density(q.matrix().row(i).transpose(), hyper.gamma.row(i).transpose());
    for (int i = 0; i < r; ++i) out += log_dirichlet_density(omega.col(i), hyper.beta.col(i));
    return out;
}

DrawStore run_chain(const CoarsenedSeries& bins, const DirichletHyper& hyper, const Pi1Config& config, int states,
                    const DyadicPartition& partition) {
    config.validate();
    const int kappa = partition.bins();
    hyper.validate(states, kappa);
    for (int b : bins)
        if (b < 0 || b >= kappa) throw InvalidArgument("bin index out of range for the partition");

    Rng rng(config.seed);
    Pi1State state{TransitionMatrix(Eigen::MatrixXd::Identity(states, states)), Eigen::MatrixXd(),
                   initial_latent_path(bins, states, kappa, rng)};

    DrawStore store;
    store.seed = config.seed;
    store.config = config;
    store.states = states;
    store.bins = kappa;
    store.partition_level = partition.level();
    for (long it = 1; it <= config.iterations; ++it) {
        // Q_it, omega_it are drawn from the current path, then the path is refreshed.
        state = gibbs_sweep(std::move(state), bins, kappa, hyper, rng);
        if (it > config.burn_in && (it - config.burn_in) % config.thin == 0)
            store.push_back(state.q.matrix(), state.omega, log_posterior(state.q, state.omega, bins, hyper), it);
    }
    return relabel_draws(std::move(store));
}

double relabel_distance(const Eigen::MatrixXd& q_a, const Eigen::MatrixXd& omega_a, const Eigen::MatrixXd& q_b,
                        const Eigen::MatrixXd& omega_b) {
    double d = (q_a - q_b).squaredNorm();
    if (omega_a.size() > 0 && omega_b.size() > 0) d += (omega_a - omega_b).squaredNorm();
    return d;
}

Eigen::MatrixXd permute_transition(const Eigen::MatrixXd& q, const std::vector<int>& perm) {
    const Eigen::Index r = q.rows();
    Eigen::MatrixXd out(r, r);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j) out(i, j) = q(perm[i], perm[j]);
    return out;
}

Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = m.col(perm[j]);
    return out;
}

std::vector<std::vector<int>> all_permutations(int states) {
    std::vector<int> perm(states);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::vector<int>> out;
    do {
        out.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

DrawStore relabel_draws(DrawStore store) {
    if (store.empty()) throw InvalidArgument("cannot relabel an empty store");
    const auto best = std::max_element(store.log_posterior.begin(), store.log_posterior.end());
    const auto ref = static_cast<std::size_t>(best - store.log_posterior.begin());
    store.relabel_reference_index = static_cast<long>(ref);
    const Eigen::MatrixXd q_ref = store.q[ref];
    const Eigen::MatrixXd omega_ref = store.omega[ref];
    const auto perms = all_permutations(static_cast<int>(q_ref.rows()));

    for (std::size_t i = 0; i < store.size(); ++i) {
        double best_d = std::numeric_limits<double>::infinity();
        const std::vector<int>* best_perm = &perms.front();
        for (const auto& perm : perms) {
            const Eigen::MatrixXd qp = permute_transition(store.q[i], perm);
            const Eigen::MatrixXd wp = store.omega[i].size() > 0 ? permute_columns(store.omega[i], perm) : store.omega[i];
            const double d = relabel_distance(qp, wp, q_ref, omega_ref);
            if (d < best_d) {
                best_d = d;
                best_perm = &perm;
            }
        }
        store.q[i] = permute_transition(store.q[i], *best_perm);
        if (store.omega[i].size() > 0) store.omega[i] = permute_columns(store.omega[i], *best_perm);
        // Compose with whatever permutation was already applied.
        std::vector<int> composed(best_perm->size());
        for (std::size_t k = 0; k < composed.size(); ++k) composed[k] = store.relabeling[i][(*best_perm)[k]];
        store.relabeling[i] = std::move(composed);
    }
    return store;
}

double empirical_quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw InvalidArgument("quantile of an empty sample");
    prob = std::clamp(prob, 0.0, 1.0);
    std::sort(values.begin(), values.end());
    const double h = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

QSummary summarize(const DrawStore& store, double alpha) {
    if (store.empty()) throw InvalidArgument("cannot summarize an empty store");
    const Eigen::Index r = store.q.front().rows();
    QSummary out{Eigen::MatrixXd::Zero(r, r), Eigen::MatrixXd(r, r), Eigen::MatrixXd(r, r), alpha};
    std::vector<double> column(store.size());
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j) {
            for (std::size_t d = 0; d < store.size(); ++d) column[d] = store.q[d](i, j);
            out.mean(i, j) = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size());
            out.lower(i, j) = empirical_quantile(column, alpha / 2.0);
            out.upper(i, j) = empirical_quantile(column, 1.0 - alpha / 2.0);
        }
    return out;
}

BinTuningResult bin_tuning_heuristic(const std::map<int, DrawStore>& stores, int reference_bins,
                                     const std::vector<double>& alphas) {
    if (stores.size() < 2) throw InsufficientStores("need posterior runs for at least two bin counts");
    const auto ref = stores.find(reference_bins);
    if (ref == stores.end()) throw InsufficientStores("no store for reference kappa " + std::to_string(reference_bins));
    const Eigen::MatrixXd reference_mean = summarize(ref->second, 0.5).mean;

    BinTuningResult result;
    result.recommended_bins = reference_bins;
    bool still_accepting = true;
    for (const auto& [kappa, store] : stores) {
        // Align labels with the reference run through the posterior means.
        const Eigen::MatrixXd m = summarize(store, 0.5).mean;
        std::vector<int> align;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& perm : all_permutations(static_cast<int>(m.rows()))) {
            const double d = (permute_transition(m, perm) - reference_mean).squaredNorm();
            if (d < best) {
                best = d;
                align = perm;
            }
        }
        bool ok = true;
        for (double alpha : alphas) {
            // "Well within" C_alpha: inside its central (1 - 2 alpha) part.
            const QSummary inner = summarize(store, 2.0 * alpha);
            ok = ok && (reference_mean.array() > permute_transition(inner.lower, align).array()).all() &&
                 (reference_mean.array() < permute_transition(inner.upper, align).array()).all();
        }
        if (kappa == reference_bins) ok = true;
        if (kappa <= reference_bins) {
            result.accepted[kappa] = ok;
            continue;
        }
        result.accepted[kappa] = ok && still_accepting;
        if (!ok) still_accepting = false;
        if (result.accepted[kappa]) result.recommended_bins = kappa;
    }
    return result;
}

}  // namespace cuthmm
