#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "kernn/panel.hpp"

namespace kernn {

/// N x T grid of optional scalars; a value is present iff the cell is observed.
class ScalarPanel {
 public:
  ScalarPanel() = default;
  ScalarPanel(int units, int outcomes);

  int units() const { return units_; }
  int outcomes() const { return outcomes_; }
  const std::optional<double>& at(int i, int t) const { return values_[index(i, t)]; }
  bool observed(int i, int t) const { return at(i, t).has_value(); }
  void set(int i, int t, std::optional<double> v);

 private:
  std::size_t index(int i, int t) const;
  int units_ = 0;
  int outcomes_ = 0;
  std::vector<std::optional<double>> values_;
};

enum class Statistic { Mean, Std };

/// Per labeled cell, the mean or sample standard deviation (n - 1 denominator)
/// of one coordinate of the block. Other cells are missing.
ScalarPanel reduce_panel(const PanelDataset& ds, Statistic stat, int coordinate = 0,
                         int label = kObserved);

struct ScalarDistance {
  double value = 0.0;  // +inf on zero overlap
  int overlap = 0;
};

/// Mean squared difference over columns s != exclude observed in both rows.
ScalarDistance snn_distance(const ScalarPanel& sp, int i, int j, std::optional<int> exclude);

struct SnnEstimate {
  double value = 0.0;
  std::vector<int> neighbors;  // rows within eta (finite distance), excluding i
  bool used_fallback = false;
};

/// Scalar nearest-neighbor estimate at (i, t): average over rows within eta
/// that are observed at t. Falls back to the column mean over other rows.
SnnEstimate snn_estimate(const ScalarPanel& sp, double eta, int i, int t, int min_overlap = 1);

/// Two-fold column split (distances on the first ceil(T/2) columns, squared
/// error on observed cells after them). Returns the grid radius with the
/// smallest mean error; ties go to the smallest radius.
double snn_select_eta(const ScalarPanel& sp, const std::vector<double>& grid, int min_overlap = 1);

/// CSV with one line per unit and one field per outcome; empty fields are missing.
void write_scalar_csv(std::ostream& os, const ScalarPanel& sp);
ScalarPanel read_scalar_csv(std::istream& is);

}  // namespace kernn
