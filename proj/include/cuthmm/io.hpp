#pragma once

// Persisted artifacts: JSON metadata and CSV tables, with loaders for
// every writer so outputs round-trip.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "cuthmm/diagnostics.hpp"
#include "cuthmm/dpm.hpp"
#include "cuthmm/histogram_gibbs.hpp"
#include "cuthmm/partition.hpp"
#include "cuthmm/spectral.hpp"

namespace cuthmm {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Throws MissingArtifact naming the path if it does not exist.
void require_file(const fs::path& path);

Json read_json(const fs::path& path);
/// Writes with two-space indentation and a trailing newline; creates parent directories.
void write_json(const fs::path& path, const Json& value);
void write_text(const fs::path& path, const std::string& text);

Json matrix_to_json(const Eigen::MatrixXd& m);  // list of rows
Eigen::MatrixXd matrix_from_json(const Json& j);

Json partition_to_json(const DyadicPartition& partition);
/// Rebuilds from mode and level; custom transforms cannot be restored.
DyadicPartition partition_from_json(const Json& j);

/// Table of doubles with a header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;  // throws InvalidArgument if absent
};
CsvTable read_csv(const fs::path& path);
void write_csv(const fs::path& path, const CsvTable& table);

/// Observations as "t,y" and the latent path as "t,x" (both 0-based t).
void write_series(const fs::path& path, const std::vector<double>& y);
void write_path(const fs::path& path, const LatentPath& x);
/// Reads the "y" column, or the only column of a one-column file.
std::vector<double> read_series(const fs::path& path);
LatentPath read_path(const fs::path& path);

/// CSV columns: iter, Q_r_s (row-major, 1-based labels), omega_m_r
/// (state-major), log_posterior, relabel. Metadata goes to the JSON file.
void write_draw_store(const DrawStore& store, const fs::path& csv_path, const fs::path& json_path,
                      const Json& partition = Json());
DrawStore read_draw_store(const fs::path& csv_path, const fs::path& json_path);

/// CSV columns: draw, state, component, mu, v, W.
void write_emission_draws(const std::vector<DpmDraw>& draws, const fs::path& path);
std::vector<DpmDraw> read_emission_draws(const fs::path& path);

/// Per-draw density values: draw, state, grid_index, y, density.
void write_density_draws(const DensityGridDraws& draws, const fs::path& path);
DensityGridDraws read_density_draws(const fs::path& path);

/// Summaries: grid_index, y, state, mean, lower, upper.
void write_density_bands(const std::vector<Band>& bands, std::span<const double> grid, const fs::path& path);
std::vector<Band> read_density_bands(const fs::path& path, std::vector<double>* grid = nullptr);

Json spectral_to_json(const SpectralEstimate& estimate);
SpectralEstimate spectral_from_json(const Json& j);

Json dpm_hyper_to_json(const DpmHyper& hyper);
DpmHyper dpm_hyper_from_json(const Json& j);

Json mle_to_json(const MleResult& mle);
MleResult mle_from_json(const Json& j);
Json fisher_to_json(const FisherEstimate& fisher);
Json bvm_to_json(const BvmReport& report);
Json refinement_to_json(const RefinementReport& report);
Json l1_to_json(const L1Report& report);
Json smoothing_to_json(const SmoothingReport& report);
Json bin_tuning_to_json(const BinTuningResult& result);

}  // namespace cuthmm
