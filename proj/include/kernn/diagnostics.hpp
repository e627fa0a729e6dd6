#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kernn/estimator.hpp"
#include "kernn/panel.hpp"

namespace kernn {

/// Data-driven instance bound on E||mu_hat - mu||_k^2 at one target and radius.
struct BoundReport {
  double eta = 0.0;
  double bias_term = 0.0;
  double overlap_term = 0.0;   // +inf when some contributing neighbor has zero overlap
  double variance_term = 0.0;  // +inf when no neighbor is observed at the target column
  double total = 0.0;
  std::map<int, double> per_unit_overlap_radii;  // e_j for every j != i
  int contributing_neighbors = 0;

  bool vacuous() const;
};

enum class BoundMode {
  General,   // confidence parameter delta as given
  HalfDelta  // delta = 1/2 with the simplified log(4N) radius
};

struct BoundOptions {
  double k_sup = 1.0;  // sup-norm of the kernel over the data domain
  double delta = 0.1;
  BoundMode mode = BoundMode::General;
};

/// 8 e^{1/e} / sqrt(2 e ln 2), about 5.9538.
double c0();

/// Overlap radius e_j for one unit; +inf on zero overlap.
double overlap_radius(double k_sup, int units, int overlap, double delta, BoundMode mode);

/// Bound from a precomputed distance row (column t excluded, min_overlap applied).
BoundReport data_driven_bound(const PanelDataset& ds, const DistanceRow& row, int n, double eta,
                              int i, int t, int label, const BoundOptions& opts);

/// Computes the distance row and evaluates the bound at one radius.
BoundReport data_driven_bound(const PanelDataset& ds, const KernelSpec& k, int n, double eta,
                              int i, int t, const DistanceOptions& dist, const BoundOptions& opts);

struct BoundSelection {
  double eta_star = 0.0;
  std::vector<BoundReport> reports;
};

/// Minimizes the bound over the grid; ties (including all-infinite grids) go to the smallest radius.
BoundSelection select_eta_by_bound(const PanelDataset& ds, const DistanceRow& row, int n, int i,
                                   int t, int label, std::span<const double> grid,
                                   const BoundOptions& opts);

BoundSelection select_eta_by_bound(const PanelDataset& ds, const KernelSpec& k, int n, int i, int t,
                                   std::span<const double> grid, const DistanceOptions& dist,
                                   const BoundOptions& opts);

void to_json(nlohmann::json& j, const BoundReport& r);

}  // namespace kernn
