#include "kernn/cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "kernn/parallel.hpp"

namespace kernn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Mean kernel value between pairs of labeled blocks within a column, filled on demand.
class ColumnGramCache {
 public:
  ColumnGramCache(const PanelDataset& ds, const KernelSpec& k, int label)
      : ds_(ds), k_(k), label_(label), columns_(static_cast<std::size_t>(ds.outcomes())) {}

  void prepare(const std::vector<int>& columns, int workers) {
    std::vector<int> todo;
    for (int t : columns)
      if (columns_[static_cast<std::size_t>(t)].empty()) todo.push_back(t);
    std::sort(todo.begin(), todo.end());
    todo.erase(std::unique(todo.begin(), todo.end()), todo.end());
    parallel_for(todo.size(), workers, [&](std::size_t c) { fill(todo[c]); });
  }

  double at(int t, int i, int j) const {
    const auto& g = columns_[static_cast<std::size_t>(t)];
    return g[static_cast<std::size_t>(i) * static_cast<std::size_t>(ds_.units()) +
             static_cast<std::size_t>(j)];
  }

 private:
  void fill(int t) {
    const auto units = static_cast<std::size_t>(ds_.units());
    std::vector<double> g(units * units, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> labeled;
    for (int j = 0; j < ds_.units(); ++j)
      if (ds_.has_label(j, t, label_)) labeled.push_back(j);
    for (std::size_t a = 0; a < labeled.size(); ++a) {
      for (std::size_t b = a; b < labeled.size(); ++b) {
        const Points& x = ds_.cell(labeled[a], t).block;
        const Points& y = ds_.cell(labeled[b], t).block;
        const double v = gram(k_, x, y).sum() / static_cast<double>(x.rows() * y.rows());
        const auto ia = static_cast<std::size_t>(labeled[a]);
        const auto ib = static_cast<std::size_t>(labeled[b]);
        g[ia * units + ib] = v;
        g[ib * units + ia] = v;
      }
    }
    columns_[static_cast<std::size_t>(t)] = std::move(g);
  }

  const PanelDataset& ds_;
  const KernelSpec& k_;
  int label_;
  std::vector<std::vector<double>> columns_;
};

struct PooledScores {
  std::vector<double> sums;
  long cells = 0;
};

PooledScores score_folds_pooled(const PanelDataset& ds, const KernelSpec& k,
                                const std::vector<CvFold>& folds, const std::vector<double>& grid,
                                const DistanceOptions& dist, Fallback fallback) {
  if (grid.empty()) throw std::invalid_argument("cv: empty eta grid");
  const int label = dist.label;
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return grid[a] < grid[b]; });

  ColumnGramCache cache(ds, k, label);
  PooledScores pooled{std::vector<double>(grid.size(), 0.0), 0};

  for (const CvFold& fold : folds) {
    if (fold.validation.empty()) continue;
    DistanceOptions fold_dist = dist;
    fold_dist.columns = fold.distance_columns;

    // Distance rows depend on (unit, whether the target column is usable).
    std::map<std::pair<int, int>, DistanceRow> rows;
    std::vector<int> cols;
    for (const auto& [i, t] : fold.validation) {
      const bool usable = fold.distance_columns.empty() ||
                          fold.distance_columns[static_cast<std::size_t>(t)] != 0;
      const std::pair<int, int> key{i, usable ? t : -1};
      if (!rows.contains(key)) rows.emplace(key, distance_row(ds, k, i, t, fold_dist));
      cols.push_back(t);
    }
    cache.prepare(cols, dist.workers);

    auto hidden = [&](int j, int t) {
      return !fold.hidden.empty() &&
             fold.hidden[static_cast<std::size_t>(j) * static_cast<std::size_t>(ds.outcomes()) +
                         static_cast<std::size_t>(t)] != 0;
    };

    // Per-cell scores for every grid entry; NaN marks a skipped cell.
    std::vector<std::vector<double>> cell_scores(fold.validation.size());
    parallel_for(fold.validation.size(), dist.workers, [&](std::size_t c) {
      const auto [i, t] = fold.validation[c];
      const bool usable = fold.distance_columns.empty() ||
                          fold.distance_columns[static_cast<std::size_t>(t)] != 0;
      const DistanceRow& row = rows.at({i, usable ? t : -1});

      std::vector<int> candidates;
      for (int j = 0; j < ds.units(); ++j)
        if (j != i && ds.has_label(j, t, label) && !hidden(j, t)) candidates.push_back(j);
      auto& out = cell_scores[c];
      if (candidates.empty()) {
        out.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
        return;
      }
      std::vector<int> ranked;
      for (int j : candidates)
        if (std::isfinite(row.value[static_cast<std::size_t>(j)])) ranked.push_back(j);
      std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
        return row.value[static_cast<std::size_t>(a)] < row.value[static_cast<std::size_t>(b)];
      });

      const double self = cache.at(t, i, i);
      auto score_of = [&](double pair_sum, double cross, std::size_t m) {
        const double mm = static_cast<double>(m);
        return pair_sum / (mm * mm) - 2.0 * cross / mm + self;
      };
      double fallback_score = kInf;
      if (fallback == Fallback::AllObservedInColumn) {
        double pair_sum = 0.0, cross = 0.0;
        for (int a : candidates) {
          cross += cache.at(t, i, a);
          for (int b : candidates) pair_sum += cache.at(t, a, b);
        }
        fallback_score = score_of(pair_sum, cross, candidates.size());
      }

      out.assign(grid.size(), 0.0);
      std::vector<int> members;
      double pair_sum = 0.0, cross = 0.0;
      std::size_t next = 0;
      for (std::size_t g : order) {
        while (next < ranked.size() &&
               row.value[static_cast<std::size_t>(ranked[next])] <= grid[g]) {
          const int j = ranked[next++];
          double with_members = 0.0;
          for (int m : members) with_members += cache.at(t, j, m);
          pair_sum += 2.0 * with_members + cache.at(t, j, j);
          cross += cache.at(t, i, j);
          members.push_back(j);
        }
        out[g] = members.empty() ? fallback_score : score_of(pair_sum, cross, members.size());
      }
    });

    for (const auto& s : cell_scores) {
      if (std::isnan(s.front())) continue;
      for (std::size_t g = 0; g < grid.size(); ++g) pooled.sums[g] += s[g];
      ++pooled.cells;
    }
  }
  return pooled;
}

std::size_t argmin_first(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g)
    if (scores[g] < scores[best]) best = g;
  return best;
}

// Ties on equal scores go to the smallest radius regardless of grid order.
std::size_t argmin_smallest_eta(const std::vector<double>& scores, const std::vector<double>& grid) {
  std::size_t best = argmin_first(scores);
  for (std::size_t g = 0; g < scores.size(); ++g)
    if (scores[g] == scores[best] && grid[g] < grid[best]) best = g;
  return best;
}

// Contiguous split of `items` into `folds` groups whose sizes differ by at most one.
std::vector<std::vector<int>> split_folds(const std::vector<int>& items, int folds) {
  const auto k = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(folds), items.size()));
  std::vector<std::vector<int>> out(k);
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t begin = items.size() * f / k;
    const std::size_t end = items.size() * (f + 1) / k;
    out[f].assign(items.begin() + static_cast<std::ptrdiff_t>(begin),
                  items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Column-wise per-row tuning on a transposed sub-panel: validation cells sit in
// `column`; fold members are hidden so they never serve as atoms.
std::vector<CvFold> per_column_plan(const PanelDataset& ds, int label, int column, int folds) {
  std::vector<int> rows;
  for (int r = 0; r < ds.units(); ++r)
    if (ds.has_label(r, column, label)) rows.push_back(r);
  std::vector<CvFold> plan;
  for (const auto& group : split_folds(rows, folds)) {
    CvFold fold;
    fold.distance_columns.assign(static_cast<std::size_t>(ds.outcomes()), 1);
    fold.hidden.assign(static_cast<std::size_t>(ds.units()) * static_cast<std::size_t>(ds.outcomes()), 0);
    for (int r : group) {
      fold.validation.emplace_back(r, column);
      fold.hidden[static_cast<std::size_t>(r) * static_cast<std::size_t>(ds.outcomes()) +
                  static_cast<std::size_t>(column)] = 1;
    }
    plan.push_back(std::move(fold));
  }
  return plan;
}

struct ScopePlan {
  CvScope scope;
  PanelDataset sub;  // only used when the plan runs on a derived panel
  bool derived = false;
  std::vector<CvFold> folds;
};

std::vector<ScopePlan> build_plans(const PanelDataset& ds, const CVConfig& cfg) {
  const int label = cfg.distance.label;
  std::vector<ScopePlan> plans;
  if (cfg.scheme == CvScheme::TwoFoldColumns) {
    ScopePlan p;
    p.scope.name = "all";
    if (cfg.direction == Direction::ColumnWise) {
      p.sub = transpose(ds);
      p.derived = true;
      p.folds = two_fold_columns_plan(p.sub, label);
    } else {
      p.folds = two_fold_columns_plan(ds, label);
    }
    plans.push_back(std::move(p));
    return plans;
  }

  std::vector<int> rows = cfg.rows;
  if (rows.empty()) {
    rows.resize(static_cast<std::size_t>(ds.units()));
    std::iota(rows.begin(), rows.end(), 0);
  }
  const auto [first, second] = column_halves(ds.outcomes());
  for (int r : rows) {
    for (int h = 1; h <= 2; ++h) {
      const auto& half = h == 1 ? first : second;
      ScopePlan p;
      p.scope.name = "row=" + std::to_string(r) + ",half=" + std::to_string(h);
      p.scope.row = r;
      p.scope.half = h;
      if (cfg.direction == Direction::ColumnWise) {
        p.sub = transpose(select_columns(ds, half));
        p.derived = true;
        p.folds = per_column_plan(p.sub, label, r, cfg.folds);
      } else {
        p.folds = per_row_plan(ds, label, r, half, cfg.folds);
      }
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

}  // namespace

void CVConfig::validate() const {
  if (grid.empty()) throw std::invalid_argument("CVConfig: grid must be nonempty");
  for (double eta : grid)
    if (!(eta >= 0.0)) throw std::invalid_argument("CVConfig: grid radii must be >= 0");
  if (scheme == CvScheme::PerRowKFold && folds < 2)
    throw std::invalid_argument("CVConfig: k-fold needs k >= 2");
}

std::pair<std::vector<int>, std::vector<int>> column_halves(int outcomes) {
  const int split = (outcomes + 1) / 2;
  std::vector<int> first(static_cast<std::size_t>(split)), second(static_cast<std::size_t>(outcomes - split));
  std::iota(first.begin(), first.end(), 0);
  std::iota(second.begin(), second.end(), split);
  return {first, second};
}

std::vector<CvFold> two_fold_columns_plan(const PanelDataset& ds, int label) {
  if (ds.outcomes() < 2) throw std::invalid_argument("cv: need T >= 2");
  const auto [first, second] = column_halves(ds.outcomes());
  CvFold fold;
  fold.distance_columns.assign(static_cast<std::size_t>(ds.outcomes()), 0);
  for (int s : first) fold.distance_columns[static_cast<std::size_t>(s)] = 1;
  for (int i = 0; i < ds.units(); ++i)
    for (int t : second)
      if (ds.has_label(i, t, label)) fold.validation.emplace_back(i, t);
  return {fold};
}

std::vector<CvFold> per_row_plan(const PanelDataset& ds, int label, int row,
                                 const std::vector<int>& half, int folds) {
  std::vector<int> observed;
  for (int t : half)
    if (ds.has_label(row, t, label)) observed.push_back(t);
  std::vector<CvFold> plan;
  for (const auto& group : split_folds(observed, folds)) {
    CvFold fold;
    fold.distance_columns.assign(static_cast<std::size_t>(ds.outcomes()), 0);
    for (int s : half) fold.distance_columns[static_cast<std::size_t>(s)] = 1;
    for (int t : group) {
      fold.distance_columns[static_cast<std::size_t>(t)] = 0;
      fold.validation.emplace_back(row, t);
    }
    plan.push_back(std::move(fold));
  }
  return plan;
}

std::vector<double> score_folds(const PanelDataset& ds, const KernelSpec& k,
                                const std::vector<CvFold>& folds, const std::vector<double>& grid,
                                const DistanceOptions& dist, Fallback fallback) {
  PooledScores pooled = score_folds_pooled(ds, k, folds, grid, dist, fallback);
  if (pooled.cells == 0) throw std::invalid_argument("cv: no scorable validation cells");
  for (double& s : pooled.sums) s /= static_cast<double>(pooled.cells);
  return pooled.sums;
}

double CvSelection::eta_for(int row, int t, int outcomes) const {
  if (scopes.size() == 1 && scopes.front().row < 0) return scopes.front().eta_star;
  const int split = (outcomes + 1) / 2;
  // A target in the second half uses the radius tuned on the first, and vice versa.
  const int wanted = t >= split ? 1 : 2;
  for (const CvScope& s : scopes)
    if (s.row == row && s.half == wanted) return s.eta_star;
  throw std::out_of_range("CvSelection: no radius tuned for row " + std::to_string(row));
}

double cv_score(const PanelDataset& ds, const KernelSpec& k, double eta, const CVConfig& cfg) {
  const std::vector<double> grid{eta};
  double total = 0.0;
  long cells = 0;
  for (const ScopePlan& p : build_plans(ds, cfg)) {
    const PooledScores s =
        score_folds_pooled(p.derived ? p.sub : ds, k, p.folds, grid, cfg.distance, cfg.fallback);
    total += s.sums[0];
    cells += s.cells;
  }
  if (cells == 0) throw std::invalid_argument("cv: no scorable validation cells");
  return total / static_cast<double>(cells);
}

CvSelection select_eta(const PanelDataset& ds, const KernelSpec& k, const CVConfig& cfg) {
  cfg.validate();
  CvSelection sel;
  sel.grid = cfg.grid;
  for (ScopePlan& p : build_plans(ds, cfg)) {
    const PooledScores s =
        score_folds_pooled(p.derived ? p.sub : ds, k, p.folds, cfg.grid, cfg.distance, cfg.fallback);
    if (s.cells == 0) {
      if (cfg.scheme == CvScheme::TwoFoldColumns)
        throw std::invalid_argument("cv: no scorable validation cells");
      p.scope.scores.assign(cfg.grid.size(), kInf);
    } else {
      p.scope.scores = s.sums;
      for (double& v : p.scope.scores) v /= static_cast<double>(s.cells);
    }
    p.scope.eta_star = cfg.grid[argmin_smallest_eta(p.scope.scores, cfg.grid)];
    sel.scopes.push_back(std::move(p.scope));
  }
  return sel;
}

std::vector<double> geometric_grid(double lo, double hi, int points) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1)
    throw std::invalid_argument("geometric_grid: need 0 < lo <= hi and points >= 1");
  std::vector<double> out;
  if (points == 1 || lo == hi) return {hi};
  const double ratio = std::log(hi / lo) / (points - 1);
  for (int p = 0; p < points; ++p) out.push_back(lo * std::exp(ratio * p));
  out.back() = hi;
  return out;
}

std::vector<double> default_eta_grid(const PanelDataset& ds, const KernelSpec& k,
                                     const DistanceOptions& dist, int points) {
  const DistanceMatrix m = distance_matrix(ds, k, std::nullopt, dist);
  std::vector<double> finite;
  for (Eigen::Index i = 0; i < m.value.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.value.cols(); ++j)
      if (std::isfinite(m.value(i, j))) finite.push_back(m.value(i, j));
  if (finite.empty()) throw std::invalid_argument("default_eta_grid: no finite distances");
  std::sort(finite.begin(), finite.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(finite.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, finite.size() - 1);
    return finite[lo] + (pos - static_cast<double>(lo)) * (finite[hi] - finite[lo]);
  };
  const double hi = quantile(0.95);
  if (!(hi > 0.0)) return {0.0};
  double lo = quantile(0.10);
  if (!(lo > 0.0)) lo = 1e-3 * hi;
  return geometric_grid(lo, hi, points);
}

std::string to_string(CvScheme s) {
  return s == CvScheme::TwoFoldColumns ? "two_fold_columns" : "per_row_kfold";
}

CvScheme cv_scheme_from_string(const std::string& s) {
  if (s == "two_fold_columns") return CvScheme::TwoFoldColumns;
  if (s == "per_row_kfold") return CvScheme::PerRowKFold;
  throw std::invalid_argument("unknown cv scheme: " + s);
}

std::string to_string(Direction d) { return d == Direction::RowWise ? "row" : "column"; }

Direction direction_from_string(const std::string& s) {
  if (s == "row") return Direction::RowWise;
  if (s == "column") return Direction::ColumnWise;
  throw std::invalid_argument("unknown direction: " + s);
}

}  // namespace kernn
