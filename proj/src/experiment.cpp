#include "cuthmm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "cuthmm/diagnostics.hpp"
#include "cuthmm/errors.hpp"
#include "cuthmm/spectral.hpp"
#include "cuthmm/stats.hpp"

namespace cuthmm {

namespace {

constexpr int kMaxLevel = 12;

// Stage tags for derive_seed.
enum : std::uint64_t { kStagePi1 = 1, kStagePi2 = 2, kStageFull = 3, kStageSpectral = 4 };

// ---- strict JSON reading -------------------------------------------------

void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("unknown field '" + (where.empty() ? key : where + "." + key) + "'");
    }
}

std::string field(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <class T>
void read_number(const Json& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("'" + field(where, key) + "' must be a number");
        out = v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("'" + field(where, key) + "' must be a non-negative integer");
        out = v.get<T>();
    } else {
        if (!v.is_number_integer()) throw ConfigError("'" + field(where, key) + "' must be an integer");
        const auto raw = v.get<std::int64_t>();
        if (raw < std::numeric_limits<T>::min() || raw > std::numeric_limits<T>::max())
            throw ConfigError("'" + field(where, key) + "' is out of range");
        out = static_cast<T>(raw);
    }
}

void read_string(const Json& obj, const std::string& where, const char* key, std::string& out) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_string()) throw ConfigError("'" + field(where, key) + "' must be a string");
    out = obj.at(key).get<std::string>();
}

void read_bool(const Json& obj, const std::string& where, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_boolean()) throw ConfigError("'" + field(where, key) + "' must be a boolean");
    out = obj.at(key).get<bool>();
}

template <class T>
void read_list(const Json& obj, const std::string& where, const char* key, std::vector<T>& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    if (!v.is_array()) throw ConfigError("'" + field(where, key) + "' must be a list");
    std::vector<T> values;
    for (std::size_t i = 0; i < v.size(); ++i) {
        T x{};
        read_number(Json{{"item", v[i]}}, field(where, key) + "[" + std::to_string(i) + "]", "item", x);
        values.push_back(x);
    }
    out = std::move(values);
}

Eigen::MatrixXd read_matrix(const Json& v, const std::string& name) {
    if (!v.is_array() || v.empty()) throw ConfigError("'" + name + "' must be a non-empty list of rows");
    const auto rows = static_cast<Eigen::Index>(v.size());
    if (!v[0].is_array() || v[0].empty()) throw ConfigError("'" + name + "' rows must be non-empty lists");
    const auto cols = static_cast<Eigen::Index>(v[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = v[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ConfigError("'" + name + "' rows must have equal length");
        for (Eigen::Index k = 0; k < cols; ++k) {
            if (!row[static_cast<std::size_t>(k)].is_number()) throw ConfigError("'" + name + "' entries must be numbers");
            m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
    }
    return m;
}

EmissionSpec read_emission(const Json& v, const std::string& where) {
    if (!v.is_object() || !v.contains("family") || !v.at("family").is_string())
        throw ConfigError("'" + where + "' must be an object with a 'family'");
    const std::string family = v.at("family").get<std::string>();
    EmissionSpec e;
    if (family == "normal") {
        check_keys(v, where, {"family", "mean", "sd"});
        double mean = 0.0, sd = 1.0;
        read_number(v, where, "mean", mean);
        read_number(v, where, "sd", sd);
        e.weights = {1.0};
        e.means = {mean};
        e.sds = {sd};
    } else if (family == "normal_mixture") {
        check_keys(v, where, {"family", "weights", "means", "sds"});
        read_list(v, where, "weights", e.weights);
        read_list(v, where, "means", e.means);
        read_list(v, where, "sds", e.sds);
    } else {
        throw ConfigError("'" + where + ".family' must be 'normal' or 'normal_mixture'");
    }
    return e;
}

Json emission_to_json(const EmissionSpec& e) {
    if (e.weights.size() == 1) return Json{{"family", "normal"}, {"mean", e.means[0]}, {"sd", e.sds[0]}};
    return Json{{"family", "normal_mixture"}, {"weights", e.weights}, {"means", e.means}, {"sds", e.sds}};
}

// ---- helpers -------------------------------------------------------------

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string cell_name(long n, int kappa) { return "n" + std::to_string(n) + "_k" + std::to_string(kappa); }

TransformG0 make_transform(const std::string& name) {
    return transform_mode_from_string(name) == TransformG0::Mode::PureSigmoid ? TransformG0::pure_sigmoid()
                                                                              : TransformG0::sigmoid_linear();
}

std::vector<double> prefix(const std::vector<double>& y, long n) {
    if (n > static_cast<long>(y.size()))
        throw ConfigError("series has " + std::to_string(y.size()) + " observations but n = " + std::to_string(n) +
                          " was requested");
    return {y.begin(), y.begin() + n};
}

Eigen::MatrixXd mean_of(const std::vector<Eigen::MatrixXd>& draws) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(draws.front().rows(), draws.front().cols());
    for (const auto& d : draws) m += d;
    return m / static_cast<double>(draws.size());
}

// Runs fn(i) for i < count on up to `jobs` threads; rethrows the first failure.
template <class Fn>
void parallel_for(int jobs, std::size_t count, Fn&& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mutex;
    std::vector<std::thread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

class OutputList {
public:
    explicit OutputList(fs::path root) : root_(std::move(root)) {}
    void add(const fs::path& p) {
        std::lock_guard lock(mutex_);
        paths_.push_back(fs::relative(p, root_).generic_string());
    }
    Outputs sorted() const {
        Outputs out = paths_;
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    fs::path root_;
    std::mutex mutex_;
    Outputs paths_;
};

struct Observations {
    std::vector<double> y;
    std::vector<double> grid;
    bool simulated = false;
};

Observations load_observations(const RunContext& ctx) {
    Observations obs;
    obs.y = read_series(ctx.observations_path());
    const Json meta = read_json(ctx.data_dir() / "simulation.json");
    obs.simulated = meta.value("simulated", false);
    obs.grid = default_grid(obs.y, ctx.config.outputs.grid_points);
    return obs;
}

DirichletHyper pi1_hyper(const ExperimentConfig& cfg, int kappa) {
    DirichletHyper h;
    h.gamma = Eigen::MatrixXd::Constant(cfg.model.states, cfg.model.states, cfg.pi1.gamma);
    h.beta = Eigen::MatrixXd::Constant(kappa, cfg.model.states, cfg.pi1.beta);
    return h;
}

RowMatrix truth_density(const ExperimentConfig& cfg, std::span<const double> grid) {
    RowMatrix d(cfg.model.states, static_cast<Eigen::Index>(grid.size()));
    for (int r = 0; r < cfg.model.states; ++r)
        for (std::size_t g = 0; g < grid.size(); ++g)
            d(r, static_cast<Eigen::Index>(g)) = cfg.model.emissions[static_cast<std::size_t>(r)].pdf(grid[g]);
    return d;
}

double min_perm_max_error(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& perm : all_permutations(static_cast<int>(truth.rows())))
        best = std::min(best, (permute_transition(est, perm) - truth).cwiseAbs().maxCoeff());
    return best;
}

// Per-cell failures of estimators that can legitimately break down on
// short series are recorded instead of aborting the whole command.
Json failure_record(const Error& e) { return Json{{"status", "failed"}, {"error", e.what()}}; }

}  // namespace

// ---- emission laws ---------------------------------------------------------

double EmissionSpec::pdf(double y) const {
    double p = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        const double z = (y - means[j]) / sds[j];
        p += weights[j] * std::exp(-0.5 * z * z) / (sds[j] * std::sqrt(2.0 * std::numbers::pi));
    }
    return p;
}

double EmissionSpec::cdf(double y) const {
    double p = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) p += weights[j] * normal_cdf((y - means[j]) / sds[j]);
    return p;
}

double EmissionSpec::sample(Rng& rng) const {
    const std::size_t j = weights.size() == 1 ? 0 : static_cast<std::size_t>(categorical_draw(rng, weights));
    return normal_draw(rng, means[j], sds[j]);
}

Scale scale_from_string(const std::string& name) {
    if (name == "smoke") return Scale::Smoke;
    if (name == "desk") return Scale::Desk;
    if (name == "full") return Scale::Full;
    if (name.empty() || name == "config") return Scale::AsConfigured;
    throw ConfigError("scale must be smoke, desk or full, got '" + name + "'");
}

std::string to_string(Scale scale) {
    switch (scale) {
        case Scale::Smoke: return "smoke";
        case Scale::Desk: return "desk";
        case Scale::Full: return "full";
        case Scale::AsConfigured: break;
    }
    return "config";
}

// ---- configuration ---------------------------------------------------------

int ExperimentConfig::Pi2::level_for(long n) const {
    const auto it = levels.find(n);
    return it == levels.end() ? default_level : it->second;
}

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    c.model.q_star.resize(2, 2);
    c.model.q_star << 0.7, 0.3, 0.2, 0.8;
    EmissionSpec low, high;
    low.means = {-1.0};
    high.means = {1.0};
    c.model.emissions = {low, high};
    return c;
}

void ExperimentConfig::validate() const {
    const int r = model.states;
    if (r < 1) throw ConfigError("'model.states' must be at least 1");
    if (model.q_star.rows() != r || model.q_star.cols() != r)
        throw ConfigError("'model.Q_star' must be " + std::to_string(r) + " x " + std::to_string(r));
    try {
        TransitionMatrix q(model.q_star);
        (void)q;
    } catch (const Error& e) {
        throw ConfigError(std::string("'model.Q_star' is not a transition matrix: ") + e.what());
    }
    if (static_cast<int>(model.emissions.size()) != r)
        throw ConfigError("'model.emissions' needs one entry per state");
    for (std::size_t i = 0; i < model.emissions.size(); ++i) {
        const auto& e = model.emissions[i];
        const std::string where = "model.emissions[" + std::to_string(i) + "]";
        if (e.weights.empty() || e.weights.size() != e.means.size() || e.weights.size() != e.sds.size())
            throw ConfigError("'" + where + "' needs equally many weights, means and sds");
        double total = 0.0;
        for (std::size_t j = 0; j < e.weights.size(); ++j) {
            if (!(e.weights[j] >= 0.0)) throw ConfigError("'" + where + ".weights' must be non-negative");
            if (!(e.sds[j] > 0.0)) throw ConfigError("'" + where + "' sds must be positive");
            total += e.weights[j];
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("'" + where + ".weights' must sum to one");
    }

    if (data.n <= 0) throw ConfigError("'data.n' must be positive, got " + std::to_string(data.n));
    if (data.sizes.empty()) throw ConfigError("'data.sizes' must not be empty");
    for (long n : data.sizes)
        if (n <= 0 || n > data.n)
            throw ConfigError("'data.sizes' entries must lie in [1, data.n], got " + std::to_string(n));

    if (partition.levels.empty()) throw ConfigError("'partition.levels' must not be empty");
    const std::set<int> levels(partition.levels.begin(), partition.levels.end());
    if (levels.size() != partition.levels.size()) throw ConfigError("'partition.levels' must be distinct");
    for (int m : partition.levels)
        if (m < 1 || m > kMaxLevel)
            throw ConfigError("'partition.levels' entries must lie in [1, " + std::to_string(kMaxLevel) + "]");
    if (partition.transform != "sigmoid-linear" && partition.transform != "pure-sigmoid")
        throw ConfigError("'partition.transform' must be 'sigmoid-linear' or 'pure-sigmoid'");

    auto check_chain = [](const char* where, long iterations, long burn_in, long thin) {
        const std::string w(where);
        if (burn_in < 0) throw ConfigError("'" + w + ".burn_in' must be non-negative");
        if (thin < 1) throw ConfigError("'" + w + ".thin' must be at least 1");
        if (iterations <= burn_in || (iterations - burn_in) / thin < 1)
            throw ConfigError("'" + w + "' keeps no draws: iterations must exceed burn_in by at least thin");
    };
    if (!(pi1.gamma > 0.0) || !(pi1.beta > 0.0)) throw ConfigError("'pi1.gamma' and 'pi1.beta' must be positive");
    check_chain("pi1", pi1.iterations, pi1.burn_in, pi1.thin);

    try {
        pi2.hyper.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("'pi2' hyperparameters: ") + e.what());
    }
    if (pi2.interior < 1) throw ConfigError("'pi2.C' must be at least 1");
    for (long n : data.sizes)
        if (!levels.count(pi2.level_for(n)))
            throw ConfigError("'pi2.levels' maps n = " + std::to_string(n) + " to level " +
                              std::to_string(pi2.level_for(n)) + ", which is not in 'partition.levels'");

    if (!(full.gamma > 0.0)) throw ConfigError("'full.gamma' must be positive");
    check_chain("full", full.iterations, full.burn_in, full.thin);
    for (long n : full.sizes)
        if (n <= 0 || n > data.n) throw ConfigError("'full.sizes' entries must lie in [1, data.n]");

    if (spectral.level < 1 || spectral.level > kMaxLevel || (1 << spectral.level) < r)
        throw ConfigError("'spectral.level' must give at least as many bins as states");
    if (spectral.restarts < 1 || spectral.iterations < 1)
        throw ConfigError("'spectral.restarts' and 'spectral.iterations' must be positive");

    const std::set<long> sizes(data.sizes.begin(), data.sizes.end());
    for (long n : diagnostics.sizes)
        if (!sizes.count(n)) throw ConfigError("'diagnostics.sizes' entries must also appear in 'data.sizes'");
    if (!levels.count(diagnostics.reference_level))
        throw ConfigError("'diagnostics.reference_level' must be one of 'partition.levels'");
    for (int m : diagnostics.information_levels)
        if (!levels.count(m)) throw ConfigError("'diagnostics.information_levels' must be a subset of 'partition.levels'");
    for (double a : diagnostics.alphas)
        if (!(a > 0.0 && a < 0.5)) throw ConfigError("'diagnostics.alphas' entries must lie in (0, 0.5)");
    if (!(diagnostics.em_tol > 0.0) || diagnostics.em_max_iter < 1)
        throw ConfigError("'diagnostics.em_tol' and 'diagnostics.em_max_iter' must be positive");
    if (diagnostics.smoothing_draws < 1) throw ConfigError("'diagnostics.smoothing_draws' must be positive");

    if (outputs.directory.empty()) throw ConfigError("'outputs.directory' must not be empty");
    if (outputs.grid_points < 2) throw ConfigError("'outputs.grid_points' must be at least 2");
    if (!(outputs.band_level > 0.0 && outputs.band_level < 1.0))
        throw ConfigError("'outputs.band_level' must lie in (0, 1)");
}

ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c = ExperimentConfig::defaults();
    check_keys(j, "", {"$schema", "model", "data", "partition", "pi1", "pi2", "full", "spectral", "diagnostics",
                       "outputs", "seed"});
    read_number(j, "", "seed", c.seed);

    if (j.contains("model")) {
        const Json& m = j.at("model");
        check_keys(m, "model", {"states", "Q_star", "emissions"});
        read_number(m, "model", "states", c.model.states);
        if (m.contains("Q_star")) c.model.q_star = read_matrix(m.at("Q_star"), "model.Q_star");
        if (m.contains("emissions")) {
            if (!m.at("emissions").is_array()) throw ConfigError("'model.emissions' must be a list");
            c.model.emissions.clear();
            for (std::size_t i = 0; i < m.at("emissions").size(); ++i)
                c.model.emissions.push_back(
                    read_emission(m.at("emissions")[i], "model.emissions[" + std::to_string(i) + "]"));
        }
    }
    if (j.contains("data")) {
        const Json& d = j.at("data");
        check_keys(d, "data", {"n", "seed", "sizes", "input"});
        read_number(d, "data", "n", c.data.n);
        read_number(d, "data", "seed", c.data.seed);
        read_list(d, "data", "sizes", c.data.sizes);
        read_string(d, "data", "input", c.data.input);
        // Shrinking n alone keeps the default sizes that still fit.
        if (d.contains("n") && !d.contains("sizes")) {
            std::erase_if(c.data.sizes, [&](long s) { return s > c.data.n; });
            if (c.data.sizes.empty() || c.data.sizes.back() != c.data.n) c.data.sizes.push_back(c.data.n);
        }
    }
    if (j.contains("partition")) {
        const Json& p = j.at("partition");
        check_keys(p, "partition", {"levels", "transform"});
        read_list(p, "partition", "levels", c.partition.levels);
        read_string(p, "partition", "transform", c.partition.transform);
    }
    if (j.contains("pi1")) {
        const Json& p = j.at("pi1");
        check_keys(p, "pi1", {"gamma", "beta", "iterations", "burn_in", "thin"});
        read_number(p, "pi1", "gamma", c.pi1.gamma);
        read_number(p, "pi1", "beta", c.pi1.beta);
        read_number(p, "pi1", "iterations", c.pi1.iterations);
        read_number(p, "pi1", "burn_in", c.pi1.burn_in);
        read_number(p, "pi1", "thin", c.pi1.thin);
    }
    if (j.contains("pi2")) {
        const Json& p = j.at("pi2");
        check_keys(p, "pi2", {"M0", "mu_c", "sigma_c2", "alpha_sigma", "beta_sigma", "S_max", "C", "levels",
                              "default_level"});
        read_number(p, "pi2", "M0", c.pi2.hyper.concentration);
        read_number(p, "pi2", "mu_c", c.pi2.hyper.mu_c);
        read_number(p, "pi2", "sigma_c2", c.pi2.hyper.sigma_c2);
        read_number(p, "pi2", "alpha_sigma", c.pi2.hyper.alpha_sigma);
        read_number(p, "pi2", "beta_sigma", c.pi2.hyper.beta_sigma);
        read_number(p, "pi2", "S_max", c.pi2.hyper.s_max);
        read_number(p, "pi2", "C", c.pi2.interior);
        read_number(p, "pi2", "default_level", c.pi2.default_level);
        if (p.contains("levels")) {
            const Json& l = p.at("levels");
            if (!l.is_object()) throw ConfigError("'pi2.levels' must map series lengths to partition levels");
            c.pi2.levels.clear();
            for (const auto& [key, value] : l.items()) {
                long n = 0;
                try {
                    std::size_t used = 0;
                    n = std::stol(key, &used);
                    if (used != key.size()) throw std::invalid_argument(key);
                } catch (const std::exception&) {
                    throw ConfigError("'pi2.levels' keys must be integers, got '" + key + "'");
                }
                int level = 0;
                read_number(l, "pi2.levels", key.c_str(), level);
                c.pi2.levels[n] = level;
            }
        }
    }
    if (j.contains("full")) {
        const Json& f = j.at("full");
        check_keys(f, "full", {"sizes", "gamma", "iterations", "burn_in", "thin"});
        read_list(f, "full", "sizes", c.full.sizes);
        read_number(f, "full", "gamma", c.full.gamma);
        read_number(f, "full", "iterations", c.full.iterations);
        read_number(f, "full", "burn_in", c.full.burn_in);
        read_number(f, "full", "thin", c.full.thin);
    }
    if (j.contains("spectral")) {
        const Json& s = j.at("spectral");
        check_keys(s, "spectral", {"level", "restarts", "iterations"});
        read_number(s, "spectral", "level", c.spectral.level);
        read_number(s, "spectral", "restarts", c.spectral.restarts);
        read_number(s, "spectral", "iterations", c.spectral.iterations);
    }
    if (j.contains("diagnostics")) {
        const Json& d = j.at("diagnostics");
        check_keys(d, "diagnostics", {"sizes", "reference_level", "alphas", "information_levels", "em_tol",
                                      "em_max_iter", "smoothing_draws"});
        read_list(d, "diagnostics", "sizes", c.diagnostics.sizes);
        read_number(d, "diagnostics", "reference_level", c.diagnostics.reference_level);
        read_list(d, "diagnostics", "alphas", c.diagnostics.alphas);
        read_list(d, "diagnostics", "information_levels", c.diagnostics.information_levels);
        read_number(d, "diagnostics", "em_tol", c.diagnostics.em_tol);
        read_number(d, "diagnostics", "em_max_iter", c.diagnostics.em_max_iter);
        read_number(d, "diagnostics", "smoothing_draws", c.diagnostics.smoothing_draws);
    }
    if (!(j.contains("diagnostics") && j.at("diagnostics").contains("sizes"))) {
        std::erase_if(c.diagnostics.sizes, [&](long n) {
            return std::find(c.data.sizes.begin(), c.data.sizes.end(), n) == c.data.sizes.end();
        });
        if (c.diagnostics.sizes.empty()) c.diagnostics.sizes = c.data.sizes;
    }
    if (j.contains("data") && !(j.contains("full") && j.at("full").contains("sizes"))) {
        std::erase_if(c.full.sizes, [&](long n) { return n > c.data.n; });
    }
    if (j.contains("outputs")) {
        const Json& o = j.at("outputs");
        check_keys(o, "outputs", {"directory", "grid_points", "band_level", "density_draws"});
        read_string(o, "outputs", "directory", c.outputs.directory);
        read_number(o, "outputs", "grid_points", c.outputs.grid_points);
        read_number(o, "outputs", "band_level", c.outputs.band_level);
        read_bool(o, "outputs", "density_draws", c.outputs.density_draws);
    }
    c.validate();
    return c;
}

Json config_to_json(const ExperimentConfig& c) {
    Json emissions = Json::array();
    for (const auto& e : c.model.emissions) emissions.push_back(emission_to_json(e));
    Json pi2_levels = Json::object();
    for (const auto& [n, level] : c.pi2.levels) pi2_levels[std::to_string(n)] = level;
    Json data{{"n", c.data.n}, {"seed", c.data.seed}, {"sizes", c.data.sizes}};
    if (!c.data.input.empty()) data["input"] = c.data.input;
    return Json{
        {"model", {{"states", c.model.states}, {"Q_star", matrix_to_json(c.model.q_star)}, {"emissions", emissions}}},
        {"data", data},
        {"partition", {{"levels", c.partition.levels}, {"transform", c.partition.transform}}},
        {"pi1",
         {{"gamma", c.pi1.gamma},
          {"beta", c.pi1.beta},
          {"iterations", c.pi1.iterations},
          {"burn_in", c.pi1.burn_in},
          {"thin", c.pi1.thin}}},
        {"pi2",
         {{"M0", c.pi2.hyper.concentration},
          {"mu_c", c.pi2.hyper.mu_c},
          {"sigma_c2", c.pi2.hyper.sigma_c2},
          {"alpha_sigma", c.pi2.hyper.alpha_sigma},
          {"beta_sigma", c.pi2.hyper.beta_sigma},
          {"S_max", c.pi2.hyper.s_max},
          {"C", c.pi2.interior},
          {"levels", pi2_levels},
          {"default_level", c.pi2.default_level}}},
        {"full",
         {{"sizes", c.full.sizes},
          {"gamma", c.full.gamma},
          {"iterations", c.full.iterations},
          {"burn_in", c.full.burn_in},
          {"thin", c.full.thin}}},
        {"spectral",
         {{"level", c.spectral.level}, {"restarts", c.spectral.restarts}, {"iterations", c.spectral.iterations}}},
        {"diagnostics",
         {{"sizes", c.diagnostics.sizes},
          {"reference_level", c.diagnostics.reference_level},
          {"alphas", c.diagnostics.alphas},
          {"information_levels", c.diagnostics.information_levels},
          {"em_tol", c.diagnostics.em_tol},
          {"em_max_iter", c.diagnostics.em_max_iter},
          {"smoothing_draws", c.diagnostics.smoothing_draws}}},
        {"outputs",
         {{"directory", c.outputs.directory},
          {"grid_points", c.outputs.grid_points},
          {"band_level", c.outputs.band_level},
          {"density_draws", c.outputs.density_draws}}},
        {"seed", c.seed}};
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    std::ifstream in(path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_scale(ExperimentConfig& c, Scale scale) {
    long factor = 0;
    switch (scale) {
        case Scale::Smoke: factor = 100; break;
        case Scale::Desk: factor = 10; break;
        case Scale::Full: factor = 1; break;
        case Scale::AsConfigured: return;
    }
    c.pi1.iterations = 150000 / factor;
    c.pi1.burn_in = 10000 / factor;
    c.pi1.thin = 20;
    c.full.iterations = 70000 / factor;
    c.full.burn_in = 10000 / factor;
    c.full.thin = 10;
}

std::string config_hash(const ExperimentConfig& config) {
    Json j = config_to_json(config);
    j["outputs"].erase("directory");
    const std::string text = j.dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
    for (auto t : tags) {
        words.push_back(static_cast<std::uint32_t>(t));
        words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

// ---- run layout ------------------------------------------------------------

RunContext::RunContext(ExperimentConfig cfg, Scale s, int j) : config(std::move(cfg)), scale(s), jobs(j) {
    apply_scale(config, scale);
    config.validate();
    if (jobs < 1) throw ConfigError("--jobs must be at least 1");
    hash = config_hash(config);
    run_id = hash.substr(0, 12);
    run_dir = fs::path(config.outputs.directory) / run_id;
}

fs::path RunContext::store_csv(long n, int level) const { return pi1_dir() / cell_name(n, 1 << level) / "draws.csv"; }
fs::path RunContext::store_json(long n, int level) const { return pi1_dir() / cell_name(n, 1 << level) / "draws.json"; }
fs::path RunContext::cut_dir(long n, int level) const { return pi2_dir() / cell_name(n, 1 << level); }
fs::path RunContext::full_dir(long n) const { return pi2_dir() / "full" / ("n" + std::to_string(n)); }

// ---- commands --------------------------------------------------------------

Outputs cmd_simulate(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    OutputList out(ctx.run_dir);
    std::vector<double> y;
    Json meta;
    if (cfg.data.input.empty()) {
        std::vector<EmissionSampler> samplers;
        for (const auto& e : cfg.model.emissions) samplers.push_back([e](Rng& g) { return e.sample(g); });
        Rng rng(cfg.data.seed);
        const TransitionMatrix q(cfg.model.q_star);
        const auto sim = simulate_hmm(q, samplers, static_cast<int>(cfg.data.n), rng);
        y = sim.observations;
        write_path(ctx.data_dir() / "latent_path.csv", sim.states);
        out.add(ctx.data_dir() / "latent_path.csv");

        Json emissions = Json::array();
        for (const auto& e : cfg.model.emissions) emissions.push_back(emission_to_json(e));
        std::vector<CdfFunction> cdfs;
        for (const auto& e : cfg.model.emissions) cdfs.push_back([e](double v) { return e.cdf(v); });
        Json admissibility = Json::object();
        const TransformG0 transform = make_transform(cfg.partition.transform);
        for (int level : cfg.partition.levels) {
            const auto rep = admissibility_check(build_partition(transform, level), cdfs);
            admissibility[std::to_string(1 << level)] = {{"rank", rep.rank},
                                                          {"condition_number", rep.condition_number},
                                                          {"admissible", rep.admissible}};
        }
        meta = Json{{"simulated", true},
                    {"n", cfg.data.n},
                    {"seed", cfg.data.seed},
                    {"states", cfg.model.states},
                    {"Q_star", matrix_to_json(cfg.model.q_star)},
                    {"stationary", stationary_distribution(q).probs()},
                    {"emissions", emissions},
                    {"admissibility", admissibility}};
        const auto grid = default_grid(y, cfg.outputs.grid_points);
        DensityGridDraws truth;
        truth.grid = grid;
        truth.values.push_back(truth_density(cfg, grid));
        write_density_draws(truth, ctx.data_dir() / "truth_density.csv");
        out.add(ctx.data_dir() / "truth_density.csv");
    } else {
        y = prefix(read_series(cfg.data.input), cfg.data.n);
        meta = Json{{"simulated", false}, {"n", cfg.data.n}, {"source", cfg.data.input}};
    }
    meta["sizes"] = cfg.data.sizes;
    write_series(ctx.observations_path(), y);
    out.add(ctx.observations_path());
    write_json(ctx.data_dir() / "simulation.json", meta);
    out.add(ctx.data_dir() / "simulation.json");
    return out.sorted();
}

Outputs cmd_fit_q(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    const Observations obs = load_observations(ctx);
    const TransformG0 transform = make_transform(cfg.partition.transform);
    struct Cell {
        long n;
        int level;
    };
    std::vector<Cell> cells;
    for (long n : cfg.data.sizes)
        for (int level : cfg.partition.levels) cells.push_back({n, level});

    OutputList out(ctx.run_dir);
    std::vector<CsvTable> summaries(cells.size());
    parallel_for(ctx.jobs, cells.size(), [&](std::size_t i) {
        const auto [n, level] = cells[i];
        const auto part = build_partition(transform, level);
        const auto bins = coarsen(part, prefix(obs.y, n));
        const Pi1Config chain{cfg.pi1.iterations, cfg.pi1.burn_in, cfg.pi1.thin,
                              derive_seed(cfg.seed, {kStagePi1, static_cast<std::uint64_t>(n),
                                                     static_cast<std::uint64_t>(level)})};
        const DrawStore store = run_chain(bins, pi1_hyper(cfg, part.bins()), chain, cfg.model.states, part);
        write_draw_store(store, ctx.store_csv(n, level), ctx.store_json(n, level), partition_to_json(part));
        out.add(ctx.store_csv(n, level));
        out.add(ctx.store_json(n, level));

        const QSummary s = summarize(store, 1.0 - cfg.outputs.band_level);
        const Eigen::MatrixXd sd = posterior_sd(store);
        for (int r = 0; r < cfg.model.states; ++r)
            for (int c = 0; c < cfg.model.states; ++c)
                summaries[i].rows.push_back({static_cast<double>(n), static_cast<double>(part.bins()),
                                             static_cast<double>(r), static_cast<double>(c), s.mean(r, c), sd(r, c),
                                             s.lower(r, c), s.upper(r, c)});
    });
    CsvTable summary;
    summary.header = {"n", "kappa", "row", "col", "mean", "sd", "lower", "upper"};
    for (const auto& s : summaries) summary.rows.insert(summary.rows.end(), s.rows.begin(), s.rows.end());
    write_csv(ctx.pi1_dir() / "summary.csv", summary);
    out.add(ctx.pi1_dir() / "summary.csv");
    return out.sorted();
}

Outputs cmd_fit_emissions(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    const Observations obs = load_observations(ctx);
    // Fail before any work if a transition store is missing.
    for (long n : cfg.data.sizes) {
        require_file(ctx.store_csv(n, cfg.pi2.level_for(n)));
        require_file(ctx.store_json(n, cfg.pi2.level_for(n)));
    }
    OutputList out(ctx.run_dir);
    parallel_for(ctx.jobs, cfg.data.sizes.size(), [&](std::size_t i) {
        const long n = cfg.data.sizes[i];
        const int level = cfg.pi2.level_for(n);
        const DrawStore store = read_draw_store(ctx.store_csv(n, level), ctx.store_json(n, level));
        const auto y = prefix(obs.y, n);
        const NestedConfig nested{cfg.pi2.interior,
                                  derive_seed(cfg.seed, {kStagePi2, static_cast<std::uint64_t>(n),
                                                         static_cast<std::uint64_t>(level)})};
        const NestedResult res = nested_run(store, y, cfg.pi2.hyper, nested, obs.grid);
        const fs::path dir = ctx.cut_dir(n, level);
        write_emission_draws(res.draws, dir / "emission_draws.csv");
        out.add(dir / "emission_draws.csv");
        write_density_bands(pointwise_bands(res.densities, cfg.outputs.band_level), obs.grid,
                            dir / "density_bands.csv");
        out.add(dir / "density_bands.csv");
        if (cfg.outputs.density_draws) {
            write_density_draws(res.densities, dir / "density_draws.csv");
            out.add(dir / "density_draws.csv");
        }
        DpmHyper used = cfg.pi2.hyper;
        used.s_max = res.s_max;
        write_json(dir / "run.json", Json{{"n", n},
                                          {"kappa", 1 << level},
                                          {"C", cfg.pi2.interior},
                                          {"seed", nested.seed},
                                          {"draws", res.draws.size()},
                                          {"band_level", cfg.outputs.band_level},
                                          {"hyper", dpm_hyper_to_json(used)},
                                          {"transition_store", fs::relative(ctx.store_csv(n, level), ctx.run_dir)
                                                                   .generic_string()}});
        out.add(dir / "run.json");
    });
    return out.sorted();
}

Outputs cmd_fit_full(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    const Observations obs = load_observations(ctx);
    OutputList out(ctx.run_dir);
    parallel_for(ctx.jobs, cfg.full.sizes.size(), [&](std::size_t i) {
        const long n = cfg.full.sizes[i];
        const auto y = prefix(obs.y, n);
        const FullBayesConfig chain{cfg.full.iterations, cfg.full.burn_in, cfg.full.thin,
                                    derive_seed(cfg.seed, {kStageFull, static_cast<std::uint64_t>(n)})};
        const Eigen::MatrixXd prior = Eigen::MatrixXd::Constant(cfg.model.states, cfg.model.states, cfg.full.gamma);
        const FullBayesResult res = full_bayes_run(y, cfg.model.states, cfg.pi2.hyper, prior, chain, obs.grid);
        const fs::path dir = ctx.full_dir(n);
        write_draw_store(res.store, dir / "draws.csv", dir / "draws.json");
        out.add(dir / "draws.csv");
        out.add(dir / "draws.json");
        write_emission_draws(res.draws, dir / "emission_draws.csv");
        out.add(dir / "emission_draws.csv");
        write_density_bands(pointwise_bands(res.densities, cfg.outputs.band_level), obs.grid,
                            dir / "density_bands.csv");
        out.add(dir / "density_bands.csv");
        if (cfg.outputs.density_draws) {
            write_density_draws(res.densities, dir / "density_draws.csv");
            out.add(dir / "density_draws.csv");
        }
        DpmHyper used = cfg.pi2.hyper;
        used.s_max = res.s_max;
        write_json(dir / "run.json", Json{{"n", n},
                                          {"seed", chain.seed},
                                          {"iterations", chain.iterations},
                                          {"burn_in", chain.burn_in},
                                          {"thin", chain.thin},
                                          {"draws", res.draws.size()},
                                          {"band_level", cfg.outputs.band_level},
                                          {"transition_prior", cfg.full.gamma},
                                          {"hyper", dpm_hyper_to_json(used)}});
        out.add(dir / "run.json");
    });
    return out.sorted();
}

Outputs cmd_spectral(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    const Observations obs = load_observations(ctx);
    const auto part = build_partition(make_transform(cfg.partition.transform), cfg.spectral.level);
    OutputList out(ctx.run_dir);
    parallel_for(ctx.jobs, cfg.data.sizes.size(), [&](std::size_t i) {
        const long n = cfg.data.sizes[i];
        SpectralOptions options;
        options.power = PowerMethodOptions{cfg.spectral.restarts, cfg.spectral.iterations};
        options.seed = derive_seed(cfg.seed, {kStageSpectral, static_cast<std::uint64_t>(n)});
        Json j;
        try {
            const auto est = spectral_estimate(coarsen(part, prefix(obs.y, n)), part.bins(), cfg.model.states,
                                               std::nullopt, options);
            j = spectral_to_json(est);
            j["status"] = "ok";
            if (obs.simulated) j["max_abs_error_vs_truth"] = min_perm_max_error(est.q_hat.matrix(), cfg.model.q_star);
        } catch (const Error& e) {
            if (e.category() != Error::Category::Numerical) throw;
            j = failure_record(e);
        }
        j["n"] = n;
        j["kappa"] = part.bins();
        j["seed"] = options.seed;
        const fs::path p = ctx.spectral_dir() / (cell_name(n, part.bins()) + ".json");
        write_json(p, j);
        out.add(p);
    });
    return out.sorted();
}

Outputs cmd_diagnose(const RunContext& ctx) {
    const auto& cfg = ctx.config;
    const Observations obs = load_observations(ctx);
    const TransformG0 transform = make_transform(cfg.partition.transform);
    for (long n : cfg.diagnostics.sizes)
        for (int level : cfg.partition.levels) {
            require_file(ctx.store_csv(n, level));
            require_file(ctx.store_json(n, level));
        }

    OutputList out(ctx.run_dir);
    std::vector<CsvTable> bvm_rows(cfg.diagnostics.sizes.size());
    parallel_for(ctx.jobs, cfg.diagnostics.sizes.size(), [&](std::size_t i) {
        const long n = cfg.diagnostics.sizes[i];
        const auto y = prefix(obs.y, n);
        const fs::path dir = ctx.diagnostics_dir() / ("n" + std::to_string(n));
        std::map<int, DrawStore> stores;
        for (int level : cfg.partition.levels)
            stores[1 << level] = read_draw_store(ctx.store_csv(n, level), ctx.store_json(n, level));

        const int reference = 1 << cfg.diagnostics.reference_level;
        Json tuning = bin_tuning_to_json(bin_tuning_heuristic(stores, reference, cfg.diagnostics.alphas));
        tuning["n"] = n;
        tuning["reference_kappa"] = reference;
        tuning["alphas"] = cfg.diagnostics.alphas;
        write_json(dir / "bin_tuning.json", tuning);
        out.add(dir / "bin_tuning.json");

        if (stores.size() >= 2) {
            Json refinement = refinement_to_json(refinement_monotonicity(stores));
            refinement["n"] = n;
            write_json(dir / "refinement.json", refinement);
            out.add(dir / "refinement.json");
        }

        for (int level : cfg.diagnostics.information_levels) {
            const int kappa = 1 << level;
            const DrawStore& store = stores.at(kappa);
            const auto bins = coarsen(build_partition(transform, level), y);
            const Eigen::MatrixXd q_mean = mean_of(store.q), omega_mean = mean_of(store.omega);
            const fs::path cell = dir / ("k" + std::to_string(kappa));
            Json mle_json, fisher_json, bvm_json;
            try {
                const MleResult mle = align_mle(
                    baum_welch(bins, cfg.model.states, kappa, q_mean, omega_mean,
                               {cfg.diagnostics.em_tol, cfg.diagnostics.em_max_iter}),
                    q_mean, omega_mean);
                mle_json = mle_to_json(mle);
                const FisherEstimate fisher = observed_information(bins, mle);
                fisher_json = fisher_to_json(fisher);
                const BvmReport bvm = bvm_compare(store, mle, fisher, n);
                bvm_json = bvm_to_json(bvm);
                for (std::size_t e = 0; e < bvm.entries.size(); ++e)
                    bvm_rows[i].rows.push_back({static_cast<double>(n), static_cast<double>(kappa),
                                                static_cast<double>(bvm.entries[e].first),
                                                static_cast<double>(bvm.entries[e].second), bvm.ks[e],
                                                bvm.cov_ratio_min, bvm.cov_ratio_max});
            } catch (const Error& e) {
                if (e.category() != Error::Category::Numerical && e.category() != Error::Category::Domain) throw;
                const Json failed = failure_record(e);
                if (mle_json.is_null()) mle_json = failed;
                if (fisher_json.is_null()) fisher_json = failed;
                bvm_json = failed;
            }
            write_json(cell / "mle.json", mle_json);
            write_json(cell / "fisher.json", fisher_json);
            write_json(cell / "bvm.json", bvm_json);
            out.add(cell / "mle.json");
            out.add(cell / "fisher.json");
            out.add(cell / "bvm.json");
        }

        // Emission and smoothing errors need the truth and a cut-posterior fit.
        const int cut_level = cfg.pi2.level_for(n);
        const fs::path cut = ctx.cut_dir(n, cut_level);
        if (!obs.simulated || !fs::exists(cut / "density_bands.csv") || !fs::exists(cut / "emission_draws.csv"))
            return;
        std::vector<double> grid;
        const auto bands = read_density_bands(cut / "density_bands.csv", &grid);
        RowMatrix estimate(static_cast<Eigen::Index>(bands.size()), static_cast<Eigen::Index>(grid.size()));
        for (std::size_t r = 0; r < bands.size(); ++r) estimate.row(static_cast<Eigen::Index>(r)) = bands[r].mean;
        const L1Report l1 = l1_density_error(estimate, truth_density(cfg, grid), grid);
        Json l1_json = l1_to_json(l1);
        l1_json["n"] = n;
        l1_json["kappa"] = 1 << cut_level;
        write_json(dir / "l1.json", l1_json);
        out.add(dir / "l1.json");

        const auto draws = read_emission_draws(cut / "emission_draws.csv");
        const DrawStore& q_store = stores.at(1 << cut_level);
        if (draws.size() != q_store.size())
            throw InvalidArgument("emission draws in " + cut.string() + " do not match the transition store");
        const std::size_t keep = std::min<std::size_t>(draws.size(), static_cast<std::size_t>(cfg.diagnostics.smoothing_draws));
        DrawStore sub;
        std::vector<DpmDraw> sub_draws;
        for (std::size_t k = 0; k < keep; ++k) {
            const std::size_t idx = k * draws.size() / keep;
            sub.push_back(q_store.q[idx], q_store.omega[idx], q_store.log_posterior[idx], q_store.iteration[idx]);
            sub_draws.push_back(draws[idx]);
        }
        RowMatrix truth_log(static_cast<Eigen::Index>(y.size()), cfg.model.states);
        for (std::size_t t = 0; t < y.size(); ++t)
            for (int r = 0; r < cfg.model.states; ++r)
                truth_log(static_cast<Eigen::Index>(t), r) =
                    std::log(cfg.model.emissions[static_cast<std::size_t>(r)].pdf(y[t]));
        const RowMatrix oracle = smoothing_probabilities(TransitionMatrix(cfg.model.q_star),
                                                         EmissionLogDensityTable(truth_log));
        Json smoothing = smoothing_to_json(smoothing_error(cut_smoothing_draws(sub, sub_draws, y), oracle));
        smoothing["n"] = n;
        smoothing["kappa"] = 1 << cut_level;
        smoothing["draws_used"] = keep;
        write_json(dir / "smoothing.json", smoothing);
        out.add(dir / "smoothing.json");
    });
    CsvTable bvm;
    bvm.header = {"n", "kappa", "row", "col", "ks", "cov_ratio_min", "cov_ratio_max"};
    for (const auto& t : bvm_rows) bvm.rows.insert(bvm.rows.end(), t.rows.begin(), t.rows.end());
    write_csv(ctx.diagnostics_dir() / "bvm.csv", bvm);
    out.add(ctx.diagnostics_dir() / "bvm.csv");
    return out.sorted();
}

// ---- manifests ---------------------------------------------------------------

std::vector<std::string> command_names() {
    return {"simulate", "fit-q", "fit-emissions", "fit-full", "spectral", "diagnose"};
}

namespace {

Outputs dispatch(const std::string& command, const RunContext& ctx) {
    if (command == "simulate") return cmd_simulate(ctx);
    if (command == "fit-q") return cmd_fit_q(ctx);
    if (command == "fit-emissions") return cmd_fit_emissions(ctx);
    if (command == "fit-full") return cmd_fit_full(ctx);
    if (command == "spectral") return cmd_spectral(ctx);
    if (command == "diagnose") return cmd_diagnose(ctx);
    throw ConfigError("unknown command '" + command + "'");
}

Json manifest(const std::string& command, const RunContext& ctx, const Outputs& outputs, const std::string& started,
              double seconds) {
    return Json{{"command", command},
                {"run_id", ctx.run_id},
                {"config_hash", ctx.hash},
                {"seed", ctx.config.seed},
                {"data_seed", ctx.config.data.seed},
                {"scale", to_string(ctx.scale)},
                {"outputs", outputs},
                {"timing",
                 {{"started_utc", started},
                  {"finished_utc", utc_now()},
                  {"wall_seconds", seconds},
                  {"jobs", ctx.jobs}}}};
}

}  // namespace

Json run_command(const std::string& command, const RunContext& ctx) {
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    write_json(ctx.run_dir / "config.json", config_to_json(ctx.config));
    const Outputs outputs = dispatch(command, ctx);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Json m = manifest(command, ctx, outputs, started, seconds);
    write_json(ctx.run_dir / "manifests" / (command + ".json"), m);
    return m;
}

Json reproduce_paper(const RunContext& ctx) {
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    Outputs all;
    for (const auto& command : command_names()) {
        const Json m = run_command(command, ctx);
        for (const auto& p : m.at("outputs")) all.push_back(p.get<std::string>());
        all.push_back("manifests/" + command + ".json");
    }
    std::sort(all.begin(), all.end());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json m = manifest("reproduce-paper", ctx, all, started, seconds);
    write_json(ctx.run_dir / "manifests" / "reproduce-paper.json", m);
    return m;
}

}  // namespace cuthmm
