#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kernn/distributions.hpp"
#include "kernn/kernels.hpp"
#include "kernn/panel.hpp"

namespace kernn {

/// Per-column MMD^2 estimator used inside row distances.
enum class DistanceMode {
  UStat,  // unbiased paired U-statistic; needs a uniform-n panel with n >= 2
  VStat,  // plug-in V-statistic; any sample counts
};

/// What to return when no neighbor is observed at the target column.
enum class Fallback {
  AllObservedInColumn,  // equal mixture of every other unit with the label at t
  Empty,                // throw EmptyNeighborhoodError
};

class EmptyNeighborhoodError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DistanceOptions {
  DistanceMode mode = DistanceMode::UStat;
  int label = kObserved;
  int min_overlap = 2;
  int workers = 1;
  /// Optional per-column usability mask of length T; empty means every column.
  std::vector<char> columns;
  /// Called with (unit, outcome) for every block a distance reads. Must be
  /// thread-safe when workers > 1.
  std::function<void(int, int)> on_cell_access;
};

struct RowDistance {
  double value = 0.0;  // +inf when the overlap is zero
  int overlap = 0;
};

/// Distances from one unit to every unit, after applying min_overlap.
struct DistanceRow {
  std::vector<double> value;  // +inf for self, zero overlap, or overlap < min_overlap
  std::vector<int> overlap;
};

struct DistanceMatrix {
  Eigen::MatrixXd value;
  Eigen::MatrixXi overlap;
};

/// MMD^2 between two cell blocks under the chosen estimator.
double cell_mmd2(const KernelSpec& k, const Points& x, const Points& y, DistanceMode mode);

/// Average per-column MMD^2 over columns s != exclude where both units carry the label.
/// Symmetric bit-for-bit in (i, j).
RowDistance row_distance(const PanelDataset& ds, const KernelSpec& k, int i, int j,
                         std::optional<int> exclude, const DistanceOptions& opts);

DistanceRow distance_row(const PanelDataset& ds, const KernelSpec& k, int i,
                         std::optional<int> exclude, const DistanceOptions& opts);

/// N x N distances; entries below min_overlap and the diagonal are +inf.
DistanceMatrix distance_matrix(const PanelDataset& ds, const KernelSpec& k,
                               std::optional<int> exclude, const DistanceOptions& opts);

/// Units with finite distance <= eta, ascending id.
std::vector<int> neighborhood(std::span<const double> distances, double eta);

struct EstimateOptions {
  double eta = 0.0;
  DistanceOptions distance;
  Fallback fallback = Fallback::AllObservedInColumn;
};

struct Target {
  int unit = 0;
  int outcome = 0;
  int label = kObserved;
};

struct EstimateReport {
  WeightedSample estimate;
  Target target;
  double eta = 0.0;
  std::vector<int> neighbors;       // the full eta-neighborhood
  std::vector<int> contributors;    // units whose column-t blocks form the estimate
  std::map<int, double> distances;  // every j != i
  std::map<int, int> overlaps;
  bool used_fallback = false;
};

/// kernel-NN estimate of the label-`opts.distance.label` distribution at (i, t).
/// Column t never enters the distances.
EstimateReport estimate(const PanelDataset& ds, const KernelSpec& k, int i, int t,
                        const EstimateOptions& opts);

/// Estimate from a precomputed distance row (which must exclude column t).
EstimateReport estimate_from_row(const PanelDataset& ds, const DistanceRow& row, int i, int t,
                                 int label, double eta, Fallback fallback);

struct KteResult {
  double value = 0.0;
  EstimateReport treated;
  EstimateReport control;
};

/// Kernel treatment effect ||mu^(1) - mu^(0)||_k at (i, t) on a two-label panel.
KteResult kte(const PanelDataset& ds, const KernelSpec& k, double eta0, double eta1, int i, int t,
              const EstimateOptions& opts);

void to_json(nlohmann::json& j, const EstimateReport& r);

std::string to_string(DistanceMode m);
DistanceMode distance_mode_from_string(const std::string& s);
std::string to_string(Fallback f);
Fallback fallback_from_string(const std::string& s);

}  // namespace kernn
