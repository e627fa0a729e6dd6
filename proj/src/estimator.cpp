#include "kernn/estimator.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "kernn/parallel.hpp"

namespace kernn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_mode(const PanelDataset& ds, const DistanceOptions& opts) {
  if (opts.mode != DistanceMode::UStat) return;
  const auto n = ds.uniform_n();
  if (ds.observed_count() > 0 && !n)
    throw std::invalid_argument("UStat distances need a panel with a uniform sample count");
  if (n && *n < 2) throw std::invalid_argument("UStat distances need n >= 2 samples per cell");
}

void check_columns(const PanelDataset& ds, const DistanceOptions& opts) {
  if (!opts.columns.empty() && static_cast<int>(opts.columns.size()) != ds.outcomes())
    throw std::invalid_argument("DistanceOptions::columns must have one entry per outcome");
}

bool usable(const DistanceOptions& opts, int s) {
  return opts.columns.empty() || opts.columns[static_cast<std::size_t>(s)] != 0;
}

RowDistance row_distance_unchecked(const PanelDataset& ds, const KernelSpec& k, int i, int j,
                                   std::optional<int> exclude, const DistanceOptions& opts) {
  if (i > j) std::swap(i, j);
  double total = 0.0;
  int overlap = 0;
  for (int s = 0; s < ds.outcomes(); ++s) {
    if ((exclude && s == *exclude) || !usable(opts, s)) continue;
    if (!ds.has_label(i, s, opts.label) || !ds.has_label(j, s, opts.label)) continue;
    if (opts.on_cell_access) {
      opts.on_cell_access(i, s);
      opts.on_cell_access(j, s);
    }
    total += cell_mmd2(k, ds.cell(i, s).block, ds.cell(j, s).block, opts.mode);
    ++overlap;
  }
  if (overlap == 0) return {kInf, 0};
  return {total / overlap, overlap};
}

}  // namespace

double cell_mmd2(const KernelSpec& k, const Points& x, const Points& y, DistanceMode mode) {
  if (mode == DistanceMode::UStat) return mmd2_ustat(k, x, y);
  return mmd2_vstat(k, empirical(x), empirical(y));
}

RowDistance row_distance(const PanelDataset& ds, const KernelSpec& k, int i, int j,
                         std::optional<int> exclude, const DistanceOptions& opts) {
  if (i == j) throw std::invalid_argument("row_distance: i == j");
  check_mode(ds, opts);
  check_columns(ds, opts);
  return row_distance_unchecked(ds, k, i, j, exclude, opts);
}

DistanceRow distance_row(const PanelDataset& ds, const KernelSpec& k, int i,
                         std::optional<int> exclude, const DistanceOptions& opts) {
  check_mode(ds, opts);
  check_columns(ds, opts);
  const auto units = static_cast<std::size_t>(ds.units());
  DistanceRow row{std::vector<double>(units, kInf), std::vector<int>(units, 0)};
  parallel_for(units, opts.workers, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    if (j == i) return;
    const RowDistance r = row_distance_unchecked(ds, k, i, j, exclude, opts);
    row.overlap[jj] = r.overlap;
    row.value[jj] = r.overlap >= std::max(1, opts.min_overlap) ? r.value : kInf;
  });
  return row;
}

DistanceMatrix distance_matrix(const PanelDataset& ds, const KernelSpec& k,
                               std::optional<int> exclude, const DistanceOptions& opts) {
  check_mode(ds, opts);
  check_columns(ds, opts);
  const int units = ds.units();
  DistanceMatrix out{Eigen::MatrixXd::Constant(units, units, kInf),
                     Eigen::MatrixXi::Zero(units, units)};
  // Upper-triangle pairs in row-major order, each evaluated exactly once.
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(units) * static_cast<std::size_t>(std::max(units - 1, 0)) / 2);
  for (int i = 0; i < units; ++i)
    for (int j = i + 1; j < units; ++j) pairs.emplace_back(i, j);
  std::vector<RowDistance> results(pairs.size());
  parallel_for(pairs.size(), opts.workers, [&](std::size_t p) {
    results[p] = row_distance_unchecked(ds, k, pairs[p].first, pairs[p].second, exclude, opts);
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    const RowDistance& r = results[p];
    const double v = r.overlap >= std::max(1, opts.min_overlap) ? r.value : kInf;
    out.value(i, j) = out.value(j, i) = v;
    out.overlap(i, j) = out.overlap(j, i) = r.overlap;
  }
  return out;
}

std::vector<int> neighborhood(std::span<const double> distances, double eta) {
  if (!(eta >= 0.0)) throw std::invalid_argument("neighborhood: eta must be >= 0");
  std::vector<int> out;
  for (std::size_t j = 0; j < distances.size(); ++j) {
    if (std::isfinite(distances[j]) && distances[j] <= eta) out.push_back(static_cast<int>(j));
  }
  return out;
}

EstimateReport estimate_from_row(const PanelDataset& ds, const DistanceRow& row, int i, int t,
                                 int label, double eta, Fallback fallback) {
  if (!(eta >= 0.0)) throw std::invalid_argument("estimate: eta must be >= 0");
  if (static_cast<int>(row.value.size()) != ds.units())
    throw std::invalid_argument("estimate: distance row has the wrong length");

  std::vector<int> neighbors = neighborhood(row.value, eta);
  std::erase(neighbors, i);
  std::vector<int> contributors;
  for (int j : neighbors)
    if (ds.has_label(j, t, label)) contributors.push_back(j);

  bool used_fallback = false;
  if (contributors.empty()) {
    if (fallback == Fallback::Empty)
      throw EmptyNeighborhoodError("no neighbor of unit " + std::to_string(i) +
                                   " within eta=" + std::to_string(eta) +
                                   " carries label " + std::to_string(label) + " at outcome " +
                                   std::to_string(t));
    used_fallback = true;
    for (int j = 0; j < ds.units(); ++j)
      if (j != i && ds.has_label(j, t, label)) contributors.push_back(j);
    if (contributors.empty())
      throw EmptyNeighborhoodError("no unit carries label " + std::to_string(label) +
                                   " at outcome " + std::to_string(t));
  }

  std::vector<std::pair<double, WeightedSample>> parts;
  parts.reserve(contributors.size());
  for (int j : contributors) parts.emplace_back(1.0, empirical(ds.cell(j, t).block));

  EstimateReport report{
      .estimate = mixture(parts),
      .target = {i, t, label},
      .eta = eta,
      .neighbors = std::move(neighbors),
      .contributors = std::move(contributors),
      .distances = {},
      .overlaps = {},
      .used_fallback = used_fallback,
  };
  for (int j = 0; j < ds.units(); ++j) {
    if (j == i) continue;
    report.distances[j] = row.value[static_cast<std::size_t>(j)];
    report.overlaps[j] = row.overlap[static_cast<std::size_t>(j)];
  }
  return report;
}

EstimateReport estimate(const PanelDataset& ds, const KernelSpec& k, int i, int t,
                        const EstimateOptions& opts) {
  if (ds.outcomes() < 2)
    throw std::invalid_argument("estimate: need at least two outcomes to hold column t out");
  if (i < 0 || i >= ds.units() || t < 0 || t >= ds.outcomes())
    throw std::out_of_range("estimate: target out of range");
  const DistanceRow row = distance_row(ds, k, i, t, opts.distance);
  return estimate_from_row(ds, row, i, t, opts.distance.label, opts.eta, opts.fallback);
}

KteResult kte(const PanelDataset& ds, const KernelSpec& k, double eta0, double eta1, int i, int t,
              const EstimateOptions& opts) {
  EstimateOptions treated_opts = opts;
  treated_opts.eta = eta1;
  treated_opts.distance.label = 1;
  EstimateOptions control_opts = opts;
  control_opts.eta = eta0;
  control_opts.distance.label = 0;
  EstimateReport treated = estimate(ds, k, i, t, treated_opts);
  EstimateReport control = estimate(ds, k, i, t, control_opts);
  const double sq = mmd2_vstat(k, treated.estimate, control.estimate);
  return {std::sqrt(std::max(0.0, sq)), std::move(treated), std::move(control)};
}

void to_json(nlohmann::json& j, const EstimateReport& r) {
  nlohmann::json distances = nlohmann::json::object();
  nlohmann::json overlaps = nlohmann::json::object();
  for (const auto& [unit, v] : r.distances) {
    // JSON has no infinity; null marks an unreachable unit.
    distances[std::to_string(unit)] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
  }
  for (const auto& [unit, v] : r.overlaps) overlaps[std::to_string(unit)] = v;
  j = {{"target", {{"i", r.target.unit}, {"t", r.target.outcome}, {"a", r.target.label}}},
       {"eta", r.eta},
       {"neighbors", r.neighbors},
       {"contributors", r.contributors},
       {"distances", std::move(distances)},
       {"overlaps", std::move(overlaps)},
       {"used_fallback", r.used_fallback},
       {"estimate", r.estimate}};
}

std::string to_string(DistanceMode m) { return m == DistanceMode::UStat ? "ustat" : "vstat"; }

DistanceMode distance_mode_from_string(const std::string& s) {
  if (s == "ustat") return DistanceMode::UStat;
  if (s == "vstat") return DistanceMode::VStat;
  throw std::invalid_argument("unknown distance mode: " + s);
}

std::string to_string(Fallback f) {
  return f == Fallback::AllObservedInColumn ? "all_observed_in_column" : "empty";
}

Fallback fallback_from_string(const std::string& s) {
  if (s == "all_observed_in_column") return Fallback::AllObservedInColumn;
  if (s == "empty") return Fallback::Empty;
  throw std::invalid_argument("unknown fallback: " + s);
}

}  // namespace kernn
