#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kernn/estimator.hpp"
#include "kernn/panel.hpp"

namespace kernn {

enum class CvScheme {
  TwoFoldColumns,  // distances from the first ceil(T/2) columns, score observed cells after them
  PerRowKFold,     // per target row and column half, k folds over that row's observed columns
};

enum class Direction { RowWise, ColumnWise };

struct CVConfig {
  std::vector<double> grid;
  CvScheme scheme = CvScheme::TwoFoldColumns;
  int folds = 5;
  Direction direction = Direction::RowWise;
  DistanceOptions distance;
  Fallback fallback = Fallback::AllObservedInColumn;
  /// PerRowKFold only: rows to tune (empty = every row).
  std::vector<int> rows;

  void validate() const;
};

/// One train/validate split. Distances may only read `distance_columns`;
/// estimates for validation cells may not use atoms from `hidden` cells.
struct CvFold {
  std::vector<char> distance_columns;    // length T
  std::vector<std::pair<int, int>> validation;
  std::vector<char> hidden;              // length N*T, or empty
};

/// Folds for the two-fold column split on `ds` as given.
std::vector<CvFold> two_fold_columns_plan(const PanelDataset& ds, int label);

/// Folds tuning one row on the columns `half` (row-wise neighbors).
std::vector<CvFold> per_row_plan(const PanelDataset& ds, int label, int row,
                                 const std::vector<int>& half, int folds);

/// Validation score for every grid radius: the cell-weighted mean over all
/// validation cells of MMD^2_V(estimate, observed empirical). Cells whose
/// column has no other labeled unit are skipped; throws if none remain.
std::vector<double> score_folds(const PanelDataset& ds, const KernelSpec& k,
                                const std::vector<CvFold>& folds, const std::vector<double>& grid,
                                const DistanceOptions& dist, Fallback fallback);

/// First two column halves: [0, ceil(T/2)) and [ceil(T/2), T).
std::pair<std::vector<int>, std::vector<int>> column_halves(int outcomes);

struct CvScope {
  std::string name;  // "all" or "row=<r>,half=<h>"
  int row = -1;      // -1 for global scopes
  int half = -1;     // 1 = tuned on the first half, 2 = on the second
  std::vector<double> scores;  // aligned with the grid
  double eta_star = 0.0;
};

struct CvSelection {
  std::vector<double> grid;
  std::vector<CvScope> scopes;

  /// Radius to use for target (row, t): the global one, or for per-row tuning the
  /// radius trained on the half that does not contain t.
  double eta_for(int row, int t, int outcomes) const;
};

/// Score of one radius under the configured scheme (pooled over every scope).
double cv_score(const PanelDataset& ds, const KernelSpec& k, double eta, const CVConfig& cfg);

/// Grid search; ties go to the smallest radius.
CvSelection select_eta(const PanelDataset& ds, const KernelSpec& k, const CVConfig& cfg);

/// Geometric grid spanning the 10% and 95% quantiles of the finite entries of
/// the full distance matrix. Nonpositive lower quantiles are replaced by 1e-3
/// times the upper one.
std::vector<double> default_eta_grid(const PanelDataset& ds, const KernelSpec& k,
                                     const DistanceOptions& dist, int points = 20);

/// Geometric grid helper.
std::vector<double> geometric_grid(double lo, double hi, int points);

std::string to_string(CvScheme s);
CvScheme cv_scheme_from_string(const std::string& s);
std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

}  // namespace kernn
