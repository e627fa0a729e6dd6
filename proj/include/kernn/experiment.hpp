#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernn/cv.hpp"
#include "kernn/diagnostics.hpp"
#include "kernn/estimator.hpp"
#include "kernn/simulation.hpp"

namespace kernn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EtaPolicy {
  enum class Kind { Fixed, Cv, Bound };
  Kind kind = Kind::Cv;
  double eta = 0.0;                  // Fixed
  std::vector<double> grid;          // Cv / Bound; empty = default grid
  int grid_points = 20;
  CvScheme scheme = CvScheme::TwoFoldColumns;
  int folds = 5;
  double delta = 0.1;                // Bound
  BoundMode bound_mode = BoundMode::General;
};

/// A target cell; negative indices count from the end (-1 = last unit/outcome).
struct TargetSpec {
  int unit = 0;
  int outcome = 0;
  int label = kObserved;
};

struct ExperimentConfig {
  nlohmann::json kernel;  // a Gaussian kernel without a bandwidth uses the median heuristic per panel
  LocationScaleDGP dgp;
  std::vector<int> sweep_N, sweep_T, sweep_n, sweep_d;
  MissingnessSpec missingness = Mcar{0.5};
  bool potential_outcomes = false;
  std::uint64_t treated_seed_offset = 1000003;
  double treated_mean_offset = 0.0;

  DistanceMode mode = DistanceMode::UStat;
  int min_overlap = 2;
  Fallback fallback = Fallback::AllObservedInColumn;
  Direction direction = Direction::RowWise;
  EtaPolicy eta_policy;

  std::vector<TargetSpec> targets;
  bool all_missing = false;
  int random_missing = 0;  // this many missing cells drawn per panel

  std::vector<std::uint64_t> seeds;
  int oracle_M = 10000;
  int workers = 1;
  bool comparison = false;
  bool timing = true;

  std::filesystem::path results_path;
  std::filesystem::path simulate_dir;

  void validate() const;
};

/// Parses and validates; throws ConfigError with the offending key.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Kernel for a panel: the configured one, with the median-heuristic bandwidth
/// filled in when a Gaussian kernel leaves it out.
KernelSpec resolve_kernel(const nlohmann::json& spec, const PanelDataset& ds);

struct Setting {
  int N = 0, T = 0, n = 0, d = 0;
  std::uint64_t seed = 0;
};

/// Every (N, T, n, d, seed) combination in canonical order.
std::vector<Setting> expand_settings(const ExperimentConfig& cfg);

/// The dataset-level DGP for one setting.
LocationScaleDGP dgp_for(const ExperimentConfig& cfg, const Setting& s);
GenerationMode mode_for(const ExperimentConfig& cfg, const Setting& s);

struct ResultRow {
  Setting setting;
  std::string p_or_beta;
  Target target;
  std::optional<double> eta, eta_cv, eta_bound, mmd2_error;
  int neighbors = 0;
  bool fallback = false;
  std::optional<double> wall_ms;
  std::optional<double> knn_mean_mse, snn_mean_mse;
  std::string error;
};

/// Simulate, estimate and evaluate every (setting, target). A failing target
/// produces a row carrying the error message; the run continues.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

/// Versioned results table, rows in canonical order.
void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows, bool comparison);

/// Writes panel, truth JSON and treatment-indicator CSV per setting into `dir`;
/// returns the written paths.
std::vector<std::filesystem::path> run_simulate(const ExperimentConfig& cfg,
                                                const std::filesystem::path& dir);

/// N lines of T comma-separated 0/1 indicators.
void write_mask_csv(std::ostream& os, const std::vector<char>& mask, int units, int outcomes);

}  // namespace kernn
