#include "kernn/baselines.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "text_io.hpp"

namespace kernn {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

ScalarPanel::ScalarPanel(int units, int outcomes)
    : units_(units),
      outcomes_(outcomes),
      values_(static_cast<std::size_t>(units) * static_cast<std::size_t>(outcomes)) {
  if (units < 0 || outcomes < 0) throw std::invalid_argument("ScalarPanel: negative shape");
}

std::size_t ScalarPanel::index(int i, int t) const {
  if (i < 0 || i >= units_ || t < 0 || t >= outcomes_)
    throw std::out_of_range("ScalarPanel: cell (" + std::to_string(i) + ", " + std::to_string(t) + ") out of range");
  return static_cast<std::size_t>(i) * static_cast<std::size_t>(outcomes_) + static_cast<std::size_t>(t);
}

void ScalarPanel::set(int i, int t, std::optional<double> v) {
  if (v && !std::isfinite(*v)) throw std::invalid_argument("ScalarPanel: values must be finite");
  values_[index(i, t)] = v;
}

ScalarPanel reduce_panel(const PanelDataset& ds, Statistic stat, int coordinate, int label) {
  if (coordinate < 0 || coordinate >= ds.dim())
    throw std::invalid_argument("reduce_panel: coordinate out of range");
  ScalarPanel sp(ds.units(), ds.outcomes());
  for (int i = 0; i < ds.units(); ++i) {
    for (int t = 0; t < ds.outcomes(); ++t) {
      if (!ds.has_label(i, t, label)) continue;
      const auto col = ds.cell(i, t).block.col(coordinate);
      const double n = static_cast<double>(col.size());
      const double mean = col.sum() / n;
      if (stat == Statistic::Mean) {
        sp.set(i, t, mean);
        continue;
      }
      if (col.size() < 2) throw std::invalid_argument("reduce_panel: Std needs n >= 2");
      sp.set(i, t, std::sqrt((col.array() - mean).square().sum() / (n - 1.0)));
    }
  }
  return sp;
}

ScalarDistance snn_distance(const ScalarPanel& sp, int i, int j, std::optional<int> exclude) {
  double total = 0.0;
  int overlap = 0;
  for (int s = 0; s < sp.outcomes(); ++s) {
    if (exclude && s == *exclude) continue;
    const auto& a = sp.at(i, s);
    const auto& b = sp.at(j, s);
    if (!a || !b) continue;
    total += (*a - *b) * (*a - *b);
    ++overlap;
  }
  if (overlap == 0) return {kInf, 0};
  return {total / overlap, overlap};
}

SnnEstimate snn_estimate(const ScalarPanel& sp, double eta, int i, int t, int min_overlap) {
  if (!(eta >= 0.0)) throw std::invalid_argument("snn_estimate: eta must be >= 0");
  SnnEstimate out;
  double sum = 0.0;
  int count = 0;
  for (int j = 0; j < sp.units(); ++j) {
    if (j == i) continue;
    const ScalarDistance dist = snn_distance(sp, i, j, t);
    if (dist.overlap < std::max(1, min_overlap) || !(dist.value <= eta)) continue;
    out.neighbors.push_back(j);
    if (const auto& v = sp.at(j, t)) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) {
    out.used_fallback = true;
    for (int j = 0; j < sp.units(); ++j) {
      if (j == i) continue;
      if (const auto& v = sp.at(j, t)) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0)
      throw std::invalid_argument("snn_estimate: no other unit is observed at outcome " + std::to_string(t));
  }
  out.value = sum / count;
  return out;
}

double snn_select_eta(const ScalarPanel& sp, const std::vector<double>& grid, int min_overlap) {
  if (grid.empty()) throw std::invalid_argument("snn_select_eta: empty grid");
  if (sp.outcomes() < 2) throw std::invalid_argument("snn_select_eta: need T >= 2");
  const int split = (sp.outcomes() + 1) / 2;
  ScalarPanel first(sp.units(), sp.outcomes());
  for (int i = 0; i < sp.units(); ++i)
    for (int t = 0; t < split; ++t) first.set(i, t, sp.at(i, t));

  std::vector<double> errors(grid.size(), 0.0);
  long cells = 0;
  for (int i = 0; i < sp.units(); ++i) {
    std::vector<ScalarDistance> dist(static_cast<std::size_t>(sp.units()));
    for (int j = 0; j < sp.units(); ++j)
      if (j != i) dist[static_cast<std::size_t>(j)] = snn_distance(first, i, j, std::nullopt);
    for (int t = split; t < sp.outcomes(); ++t) {
      const auto& truth = sp.at(i, t);
      if (!truth) continue;
      double column_sum = 0.0;
      int column_count = 0;
      for (int j = 0; j < sp.units(); ++j)
        if (j != i && sp.at(j, t)) {
          column_sum += *sp.at(j, t);
          ++column_count;
        }
      if (column_count == 0) continue;
      ++cells;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        double sum = 0.0;
        int count = 0;
        for (int j = 0; j < sp.units(); ++j) {
          const auto& d = dist[static_cast<std::size_t>(j)];
          if (j == i || d.overlap < std::max(1, min_overlap) || !(d.value <= grid[g]) || !sp.at(j, t)) continue;
          sum += *sp.at(j, t);
          ++count;
        }
        const double estimate = count > 0 ? sum / count : column_sum / column_count;
        errors[g] += (estimate - *truth) * (estimate - *truth);
      }
    }
  }
  if (cells == 0) throw std::invalid_argument("snn_select_eta: no scorable validation cells");
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (errors[g] < errors[best] || (errors[g] == errors[best] && grid[g] < grid[best])) best = g;
  return grid[best];
}

void write_scalar_csv(std::ostream& os, const ScalarPanel& sp) {
  for (int i = 0; i < sp.units(); ++i) {
    for (int t = 0; t < sp.outcomes(); ++t) {
      if (t > 0) os << ',';
      if (const auto& v = sp.at(i, t)) os << text::format_double(*v);
    }
    os << '\n';
  }
}

ScalarPanel read_scalar_csv(std::istream& is) {
  std::vector<std::vector<std::optional<double>>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (text::trim(line).empty()) continue;
    std::vector<std::optional<double>> row;
    for (auto field : text::split(line)) {
      if (field.empty())
        row.emplace_back();
      else
        row.emplace_back(text::parse_double(field));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::invalid_argument("scalar CSV: ragged row " + std::to_string(rows.size() + 1));
    rows.push_back(std::move(row));
  }
  ScalarPanel sp(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t t = 0; t < rows[i].size(); ++t) sp.set(static_cast<int>(i), static_cast<int>(t), rows[i][t]);
  return sp;
}

}  // namespace kernn
