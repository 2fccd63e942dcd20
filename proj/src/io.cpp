#include "cuthmm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "cuthmm/errors.hpp"

namespace cuthmm {

namespace {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const fs::path& path) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw ConfigError("cannot parse number '" + s + "' in " + path.string());
    return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    return out;
}

std::string perm_to_string(const std::vector<int>& perm) {
    std::string s;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (i) s += '|';
        s += std::to_string(perm[i]);
    }
    return s;
}

std::vector<int> perm_from_string(const std::string& s) {
    std::vector<int> out;
    for (const auto& part : split(s, '|')) out.push_back(std::stoi(part));
    return out;
}

}  // namespace

void require_file(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("expected artifact not found: " + path.string());
}

Json read_json(const fs::path& path) {
    require_file(path);
    std::ifstream in(path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& value) {
    auto out = open_out(path);
    out << value.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
    if (!j.is_array()) throw ConfigError("matrix must be a list of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols) throw ConfigError("ragged matrix");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

Json partition_to_json(const DyadicPartition& partition) {
    Json edges = Json::array();
    for (double e : partition.edges()) {
        if (std::isinf(e))
            edges.push_back(e > 0 ? "inf" : "-inf");
        else
            edges.push_back(e);
    }
    const auto& t = partition.transform();
    return Json{{"M", partition.level()},
                {"transform", {{"mode", to_string(t.mode())}, {"zeta", t.zeta()}, {"eta", t.eta()}}},
                {"edges", edges}};
}

DyadicPartition partition_from_json(const Json& j) {
    const auto mode = transform_mode_from_string(j.at("transform").at("mode").get<std::string>());
    if (mode == TransformG0::Mode::CustomMonotone) throw ConfigError("custom transforms cannot be restored from JSON");
    const TransformG0 t = mode == TransformG0::Mode::SigmoidLinear ? TransformG0::sigmoid_linear()
                                                                   : TransformG0::pure_sigmoid();
    return build_partition(t, j.at("M").get<int>());
}

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    throw InvalidArgument("CSV column '" + name + "' not found");
}

CsvTable read_csv(const fs::path& path) {
    require_file(path);
    std::ifstream in(path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty CSV file " + path.string());
    table.header = split(line, ',');
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != table.header.size()) throw ConfigError("ragged CSV row in " + path.string());
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_double(c, path));
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_csv(const fs::path& path, const CsvTable& table) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
        out << '\n';
    }
}

void write_series(const fs::path& path, const std::vector<double>& y) {
    auto out = open_out(path);
    out << "t,y\n";
    for (std::size_t t = 0; t < y.size(); ++t) out << t << ',' << format_double(y[t]) << '\n';
}

void write_path(const fs::path& path, const LatentPath& x) {
    auto out = open_out(path);
    out << "t,x\n";
    for (std::size_t t = 0; t < x.size(); ++t) out << t << ',' << x[t] << '\n';
}

std::vector<double> read_series(const fs::path& path) {
    require_file(path);
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = split(line, ',');
        if (first) {
            first = false;
            double probe = 0.0;
            const auto res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), probe);
            if (res.ec != std::errc()) {
                header = cells;
                continue;
            }
        }
        rows.push_back(std::move(cells));
    }
    std::size_t col = 0;
    if (!header.empty()) {
        bool found = false;
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == "y") {
                col = i;
                found = true;
            }
        if (!found && header.size() != 1) throw ConfigError("no 'y' column in " + path.string());
    } else if (!rows.empty() && rows[0].size() != 1) {
        throw ConfigError("headerless series files must have one column: " + path.string());
    }
    std::vector<double> y;
    y.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.size() <= col) throw ConfigError("ragged row in " + path.string());
        y.push_back(parse_double(r[col], path));
    }
    return y;
}

LatentPath read_path(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const int c = t.column("x");
    LatentPath x;
    for (const auto& r : t.rows) x.push_back(static_cast<int>(r[static_cast<std::size_t>(c)]));
    return x;
}

void write_draw_store(const DrawStore& store, const fs::path& csv_path, const fs::path& json_path,
                      const Json& partition) {
    const int r = store.empty() ? store.states : static_cast<int>(store.q.front().rows());
    const int orows = store.empty() ? 0 : static_cast<int>(store.omega.front().rows());
    auto out = open_out(csv_path);
    out << "iter";
    for (int i = 1; i <= r; ++i)
        for (int s = 1; s <= r; ++s) out << ",Q_" << i << '_' << s;
    for (int i = 1; i <= r; ++i)
        for (int m = 1; m <= orows; ++m) out << ",omega_" << m << '_' << i;
    out << ",log_posterior,relabel\n";
    for (std::size_t k = 0; k < store.size(); ++k) {
        out << store.iteration[k];
        for (int i = 0; i < r; ++i)
            for (int s = 0; s < r; ++s) out << ',' << format_double(store.q[k](i, s));
        for (int i = 0; i < r; ++i)
            for (int m = 0; m < orows; ++m) out << ',' << format_double(store.omega[k](m, i));
        out << ',' << format_double(store.log_posterior[k]) << ',' << perm_to_string(store.relabeling[k]) << '\n';
    }
    Json meta{{"seed", store.seed},
              {"config",
               {{"iterations", store.config.iterations},
                {"burn_in", store.config.burn_in},
                {"thin", store.config.thin},
                {"seed", store.config.seed}}},
              {"partition", partition},
              {"relabel_reference_index", store.relabel_reference_index},
              {"states", r},
              {"bins", store.bins},
              {"partition_level", store.partition_level},
              {"omega_rows", orows},
              {"draws", store.size()}};
    write_json(json_path, meta);
}

DrawStore read_draw_store(const fs::path& csv_path, const fs::path& json_path) {
    const Json meta = read_json(json_path);
    require_file(csv_path);
    DrawStore store;
    store.seed = meta.at("seed").get<std::uint64_t>();
    const auto& cfg = meta.at("config");
    store.config.iterations = cfg.at("iterations").get<long>();
    store.config.burn_in = cfg.at("burn_in").get<long>();
    store.config.thin = cfg.at("thin").get<long>();
    store.config.seed = cfg.at("seed").get<std::uint64_t>();
    store.relabel_reference_index = meta.at("relabel_reference_index").get<long>();
    store.states = meta.at("states").get<int>();
    store.bins = meta.at("bins").get<int>();
    store.partition_level = meta.at("partition_level").get<int>();
    const int r = store.states;
    const int orows = meta.at("omega_rows").get<int>();

    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);
    const std::size_t expected = 1 + static_cast<std::size_t>(r * r + r * orows) + 2;
    if (split(line, ',').size() != expected) throw ConfigError("draw store header does not match metadata: " + csv_path.string());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != expected) throw ConfigError("ragged draw store row in " + csv_path.string());
        std::size_t c = 0;
        const long iter = std::stol(cells[c++]);
        Eigen::MatrixXd q(r, r);
        for (int i = 0; i < r; ++i)
            for (int s = 0; s < r; ++s) q(i, s) = parse_double(cells[c++], csv_path);
        Eigen::MatrixXd omega(orows, r);
        for (int i = 0; i < r; ++i)
            for (int m = 0; m < orows; ++m) omega(m, i) = parse_double(cells[c++], csv_path);
        const double lp = parse_double(cells[c++], csv_path);
        store.push_back(std::move(q), std::move(omega), lp, iter);
        store.relabeling.back() = perm_from_string(cells[c]);
    }
    if (store.size() != meta.at("draws").get<std::size_t>())
        throw ConfigError("draw count does not match metadata: " + csv_path.string());
    return store;
}

void write_emission_draws(const std::vector<DpmDraw>& draws, const fs::path& path) {
    auto out = open_out(path);
    out << "draw,state,component,mu,v,W\n";
    for (std::size_t d = 0; d < draws.size(); ++d) {
        const auto& dr = draws[d];
        for (Eigen::Index r = 0; r < dr.mu.cols(); ++r)
            for (Eigen::Index j = 0; j < dr.mu.rows(); ++j)
                out << d << ',' << r << ',' << j << ',' << format_double(dr.mu(j, r)) << ','
                    << format_double(dr.v(r)) << ',' << format_double(dr.w(j, r)) << '\n';
    }
}

std::vector<DpmDraw> read_emission_draws(const fs::path& path) {
    const CsvTable t = read_csv(path);
    int draws = 0, states = 0, comps = 0;
    for (const auto& row : t.rows) {
        draws = std::max(draws, static_cast<int>(row[0]) + 1);
        states = std::max(states, static_cast<int>(row[1]) + 1);
        comps = std::max(comps, static_cast<int>(row[2]) + 1);
    }
    std::vector<DpmDraw> out(static_cast<std::size_t>(draws));
    for (auto& d : out) {
        d.mu = Eigen::MatrixXd::Zero(comps, states);
        d.v = Eigen::VectorXd::Zero(states);
        d.w = Eigen::MatrixXd::Zero(comps, states);
    }
    for (const auto& row : t.rows) {
        auto& d = out[static_cast<std::size_t>(row[0])];
        const int r = static_cast<int>(row[1]);
        const int j = static_cast<int>(row[2]);
        d.mu(j, r) = row[3];
        d.v(r) = row[4];
        d.w(j, r) = row[5];
    }
    return out;
}

void write_density_draws(const DensityGridDraws& draws, const fs::path& path) {
    auto out = open_out(path);
    out << "draw,state,grid_index,y,density\n";
    for (std::size_t d = 0; d < draws.values.size(); ++d) {
        const auto& v = draws.values[d];
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index g = 0; g < v.cols(); ++g)
                out << d << ',' << r << ',' << g << ',' << format_double(draws.grid[static_cast<std::size_t>(g)]) << ','
                    << format_double(v(r, g)) << '\n';
    }
}

DensityGridDraws read_density_draws(const fs::path& path) {
    const CsvTable t = read_csv(path);
    int draws = 0, states = 0, points = 0;
    for (const auto& row : t.rows) {
        draws = std::max(draws, static_cast<int>(row[0]) + 1);
        states = std::max(states, static_cast<int>(row[1]) + 1);
        points = std::max(points, static_cast<int>(row[2]) + 1);
    }
    DensityGridDraws out;
    out.grid.assign(static_cast<std::size_t>(points), 0.0);
    out.values.assign(static_cast<std::size_t>(draws), RowMatrix::Zero(states, points));
    for (const auto& row : t.rows) {
        const auto g = static_cast<int>(row[2]);
        out.grid[static_cast<std::size_t>(g)] = row[3];
        out.values[static_cast<std::size_t>(row[0])](static_cast<int>(row[1]), g) = row[4];
    }
    return out;
}

void write_density_bands(const std::vector<Band>& bands, std::span<const double> grid, const fs::path& path) {
    auto out = open_out(path);
    out << "grid_index,y,state,mean,lower,upper\n";
    for (std::size_t r = 0; r < bands.size(); ++r)
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const auto gi = static_cast<Eigen::Index>(g);
            out << g << ',' << format_double(grid[g]) << ',' << r << ',' << format_double(bands[r].mean(gi)) << ','
                << format_double(bands[r].lower(gi)) << ',' << format_double(bands[r].upper(gi)) << '\n';
        }
}

std::vector<Band> read_density_bands(const fs::path& path, std::vector<double>* grid) {
    const CsvTable t = read_csv(path);
    int states = 0, points = 0;
    for (const auto& row : t.rows) {
        points = std::max(points, static_cast<int>(row[0]) + 1);
        states = std::max(states, static_cast<int>(row[2]) + 1);
    }
    std::vector<Band> out(static_cast<std::size_t>(states));
    for (auto& b : out) {
        b.mean = Eigen::VectorXd::Zero(points);
        b.lower = Eigen::VectorXd::Zero(points);
        b.upper = Eigen::VectorXd::Zero(points);
    }
    if (grid) grid->assign(static_cast<std::size_t>(points), 0.0);
    for (const auto& row : t.rows) {
        const auto g = static_cast<int>(row[0]);
        auto& b = out[static_cast<std::size_t>(row[2])];
        b.mean(g) = row[3];
        b.lower(g) = row[4];
        b.upper(g) = row[5];
        if (grid) (*grid)[static_cast<std::size_t>(g)] = row[1];
    }
    return out;
}

Json spectral_to_json(const SpectralEstimate& estimate) {
    return Json{{"Q_hat", matrix_to_json(estimate.q_hat.matrix())},
                {"Omega_hat", matrix_to_json(estimate.omega_hat)},
                {"permutation", estimate.permutation},
                {"diagnostics",
                 {{"singular_values", estimate.singular_values}, {"deflation_residual", estimate.deflation_residual}}}};
}

SpectralEstimate spectral_from_json(const Json& j) {
    SpectralEstimate est{TransitionMatrix::normalized(matrix_from_json(j.at("Q_hat"))),
                         matrix_from_json(j.at("Omega_hat")),
                         j.at("permutation").get<std::vector<int>>(),
                         j.at("diagnostics").at("singular_values").get<std::vector<double>>(),
                         j.at("diagnostics").at("deflation_residual").get<double>()};
    return est;
}

Json dpm_hyper_to_json(const DpmHyper& hyper) {
    return Json{{"M0", hyper.concentration},         {"mu_c", hyper.mu_c},
                {"sigma_c2", hyper.sigma_c2},        {"alpha_sigma", hyper.alpha_sigma},
                {"beta_sigma", hyper.beta_sigma},    {"S_max", hyper.s_max}};
}

DpmHyper dpm_hyper_from_json(const Json& j) {
    DpmHyper h;
    h.concentration = j.value("M0", h.concentration);
    h.mu_c = j.value("mu_c", h.mu_c);
    h.sigma_c2 = j.value("sigma_c2", h.sigma_c2);
    h.alpha_sigma = j.value("alpha_sigma", h.alpha_sigma);
    h.beta_sigma = j.value("beta_sigma", h.beta_sigma);
    h.s_max = j.value("S_max", h.s_max);
    return h;
}

Json mle_to_json(const MleResult& mle) {
    std::vector<double> init(mle.initial.data(), mle.initial.data() + mle.initial.size());
    return Json{{"Q_hat", matrix_to_json(mle.q_hat)},
                {"omega_hat", matrix_to_json(mle.omega_hat)},
                {"initial", init},
                {"log_likelihood", mle.log_likelihood},
                {"iterations", mle.iterations},
                {"converged", mle.converged}};
}

MleResult mle_from_json(const Json& j) {
    MleResult m;
    m.q_hat = matrix_from_json(j.at("Q_hat"));
    m.omega_hat = matrix_from_json(j.at("omega_hat"));
    const auto init = j.at("initial").get<std::vector<double>>();
    m.initial = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
    m.log_likelihood = j.at("log_likelihood").get<double>();
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    return m;
}

Json fisher_to_json(const FisherEstimate& fisher) {
    return Json{{"n", fisher.n},
                {"step", fisher.step},
                {"fixed_emission_coordinates", fisher.fixed_coordinates},
                {"J", matrix_to_json(fisher.j)},
                {"J_tilde_inv", matrix_to_json(fisher.j_tilde_inv)}};
}

Json bvm_to_json(const BvmReport& report) {
    Json entries = Json::array();
    for (std::size_t k = 0; k < report.entries.size(); ++k)
        entries.push_back({{"row", report.entries[k].first + 1},
                           {"col", report.entries[k].second + 1},
                           {"ks", report.ks[k]}});
    std::vector<double> ev(report.cov_eigenvalues.data(), report.cov_eigenvalues.data() + report.cov_eigenvalues.size());
    return Json{{"n", report.n},
                {"draws", report.draws},
                {"entries", entries},
                {"cov_eigenvalues", ev},
                {"cov_ratio_min", report.cov_ratio_min},
                {"cov_ratio_max", report.cov_ratio_max},
                {"thresholds_note", "KS and covariance-ratio bands are desk-scale engineering tolerances"}};
}

Json refinement_to_json(const RefinementReport& report) {
    Json per = Json::array();
    for (std::size_t k = 0; k < report.bins.size(); ++k)
        per.push_back({{"kappa", report.bins[k]}, {"sd", matrix_to_json(report.sds[k])}});
    return Json{{"slack", report.slack}, {"monotone", report.monotone}, {"per_kappa", per}};
}

Json l1_to_json(const L1Report& report) {
    return Json{{"per_state", report.per_state}, {"permutation", report.permutation}};
}

Json smoothing_to_json(const SmoothingReport& report) {
    return Json{{"posterior_mean_tv", report.posterior_mean_tv},
                {"posterior_max_tv", report.posterior_max_tv},
                {"permutation", report.permutation},
                {"per_draw_mean_tv", report.per_draw_mean_tv}};
}

Json bin_tuning_to_json(const BinTuningResult& result) {
    Json accepted = Json::object();
    for (const auto& [k, ok] : result.accepted) accepted[std::to_string(k)] = ok;
    return Json{{"recommended_kappa", result.recommended_bins}, {"accepted", accepted}};
}

}  // namespace cuthmm
