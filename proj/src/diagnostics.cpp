#include "kernn/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace kernn {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
}  // namespace

bool BoundReport::vacuous() const { return !std::isfinite(total); }

double c0() {
  const double e = std::numbers::e;
  return 8.0 * std::exp(1.0 / e) / std::sqrt(2.0 * e * std::numbers::ln2);
}

double overlap_radius(double k_sup, int units, int overlap, double delta, BoundMode mode) {
  if (overlap <= 0) return kInf;
  const double ov = static_cast<double>(overlap);
  if (mode == BoundMode::HalfDelta) {
    const double e = std::numbers::e;
    return 8.0 * std::exp(1.0 / e) * k_sup * std::log(4.0 * units) /
           std::sqrt(2.0 * std::numbers::ln2 * ov);
  }
  return c0() * k_sup * std::sqrt(std::log(2.0 * units / delta)) / std::sqrt(ov);
}

BoundReport data_driven_bound(const PanelDataset& ds, const DistanceRow& row, int n, double eta,
                              int i, int t, int label, const BoundOptions& opts) {
  if (!(opts.delta > 0.0 && opts.delta < 1.0))
    throw std::invalid_argument("data_driven_bound: delta must lie in (0, 1)");
  if (n < 1) throw std::invalid_argument("data_driven_bound: n must be >= 1");
  if (!(opts.k_sup >= 0.0)) throw std::invalid_argument("data_driven_bound: k_sup must be >= 0");
  if (static_cast<int>(row.value.size()) != ds.units())
    throw std::invalid_argument("data_driven_bound: distance row has the wrong length");

  BoundReport r;
  r.eta = eta;
  r.bias_term = eta;
  for (int j = 0; j < ds.units(); ++j) {
    if (j == i) continue;
    r.per_unit_overlap_radii[j] =
        overlap_radius(opts.k_sup, ds.units(), row.overlap[static_cast<std::size_t>(j)], opts.delta, opts.mode);
  }

  double worst = 0.0;
  int observed = 0;
  for (int j : neighborhood(row.value, eta)) {
    if (j == i || !ds.has_label(j, t, label)) continue;
    ++observed;
    worst = std::max(worst, r.per_unit_overlap_radii[j]);
  }
  r.contributing_neighbors = observed;
  r.overlap_term = worst;
  r.variance_term = observed == 0 ? kInf
                                  : 4.0 * opts.k_sup * (std::log(static_cast<double>(n)) + 1.5) /
                                        (static_cast<double>(n) * observed);
  r.total = r.bias_term + r.overlap_term + r.variance_term;
  return r;
}

BoundReport data_driven_bound(const PanelDataset& ds, const KernelSpec& k, int n, double eta,
                              int i, int t, const DistanceOptions& dist, const BoundOptions& opts) {
  const DistanceRow row = distance_row(ds, k, i, t, dist);
  return data_driven_bound(ds, row, n, eta, i, t, dist.label, opts);
}

BoundSelection select_eta_by_bound(const PanelDataset& ds, const DistanceRow& row, int n, int i,
                                   int t, int label, std::span<const double> grid,
                                   const BoundOptions& opts) {
  if (grid.empty()) throw std::invalid_argument("select_eta_by_bound: empty grid");
  BoundSelection sel;
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    sel.reports.push_back(data_driven_bound(ds, row, n, grid[g], i, t, label, opts));
    const double total = sel.reports[g].total;
    if (total < sel.reports[best].total || (total == sel.reports[best].total && grid[g] < grid[best])) best = g;
  }
  sel.eta_star = grid[best];
  return sel;
}

BoundSelection select_eta_by_bound(const PanelDataset& ds, const KernelSpec& k, int n, int i, int t,
                                   std::span<const double> grid, const DistanceOptions& dist,
                                   const BoundOptions& opts) {
  const DistanceRow row = distance_row(ds, k, i, t, dist);
  return select_eta_by_bound(ds, row, n, i, t, dist.label, grid, opts);
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  nlohmann::json radii = nlohmann::json::object();
  for (const auto& [unit, e] : r.per_unit_overlap_radii) radii[std::to_string(unit)] = finite_or_null(e);
  j = {{"eta", r.eta},
       {"bias_term", r.bias_term},
       {"overlap_term", finite_or_null(r.overlap_term)},
       {"variance_term", finite_or_null(r.variance_term)},
       {"total", finite_or_null(r.total)},
       {"vacuous", r.vacuous()},
       {"contributing_neighbors", r.contributing_neighbors},
       {"per_unit_overlap_radii", std::move(radii)}};
}

}  // namespace kernn
