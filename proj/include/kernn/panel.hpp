#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernn/kernels.hpp"

namespace kernn {

/// Label of a cell without measurements.
inline constexpr int kMissing = -1;
/// Label of an observed cell in observational (single-intervention) panels.
inline constexpr int kObserved = 1;

struct Cell {
  int label = kMissing;
  Points block;  // n x d, empty iff missing

  bool missing() const { return label == kMissing; }
  friend bool operator==(const Cell& a, const Cell& b) {
    return a.label == b.label && a.block.rows() == b.block.rows() &&
           a.block.cols() == b.block.cols() && a.block == b.block;
  }
};

/// N units x T outcomes grid. Cells carry an intervention label and, when
/// labeled, an n x d measurement block. Labels are 0..K-1; observational
/// panels use kObserved for every measured cell.
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(int units, int outcomes, int dim);

  int units() const { return units_; }
  int outcomes() const { return outcomes_; }
  int dim() const { return dim_; }

  const Cell& cell(int i, int t) const { return cells_[index(i, t)]; }
  int label(int i, int t) const { return cells_[index(i, t)].label; }
  bool has_label(int i, int t, int a) const { return label(i, t) == a && a != kMissing; }

  /// Replaces a cell. A non-missing label needs a block with >= 1 row and `dim()` columns.
  void set_cell(int i, int t, int label, Points block);
  void set_missing(int i, int t);

  /// Common per-cell sample count when every labeled block has the same number
  /// of rows; nullopt otherwise (or when nothing is observed).
  std::optional<int> uniform_n() const;

  int observed_count() const;

  std::vector<std::string> unit_names;
  std::vector<std::string> outcome_names;

  friend bool operator==(const PanelDataset& a, const PanelDataset& b) {
    return a.units_ == b.units_ && a.outcomes_ == b.outcomes_ && a.dim_ == b.dim_ &&
           a.cells_ == b.cells_ && a.unit_names == b.unit_names &&
           a.outcome_names == b.outcome_names;
  }

 private:
  std::size_t index(int i, int t) const;

  int units_ = 0;
  int outcomes_ = 0;
  int dim_ = 0;
  std::vector<Cell> cells_;
};

enum class PanelFormat { LongCsv, Json };

/// Picks the format from the file extension (.json, otherwise long CSV).
PanelFormat format_for_path(const std::filesystem::path& path);

struct LoadOptions {
  bool require_uniform_n = false;
};

PanelDataset load_panel(const std::filesystem::path& path, PanelFormat format,
                        const LoadOptions& opts = {});
void save_panel(const PanelDataset& ds, const std::filesystem::path& path, PanelFormat format);

/// Long CSV: optional `# kernn-panel N=.. T=.. d=..` line, then header
/// `unit,time,label,sample_idx,x1..xd`. Absent (unit, time) pairs are missing.
PanelDataset read_panel_csv(std::istream& is, const LoadOptions& opts = {});
void write_panel_csv(std::ostream& os, const PanelDataset& ds);

void to_json(nlohmann::json& j, const PanelDataset& ds);
PanelDataset panel_from_json(const nlohmann::json& j, const LoadOptions& opts = {});

/// #{s != exclude : label(i, s) = label(j, s) = a}
int overlap_count(const PanelDataset& ds, int i, int j, std::optional<int> exclude, int a);

/// Swaps the roles of units and outcomes.
PanelDataset transpose(const PanelDataset& ds);

/// Sub-panel keeping the listed outcome columns in the given order.
PanelDataset select_columns(const PanelDataset& ds, const std::vector<int>& columns);

/// Pointers to every labeled block, in cell order.
std::vector<const Points*> observed_blocks(const PanelDataset& ds);

}  // namespace kernn
