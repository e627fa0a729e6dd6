#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <set>

#include "helpers.hpp"
#include "kernn/cv.hpp"

using kernn::CVConfig;
using kernn::CvScheme;
using kernn::DistanceMode;
using kernn::KernelSpec;
using kernn::PanelDataset;

namespace {

CVConfig two_fold(std::vector<double> grid, DistanceMode mode = DistanceMode::VStat) {
  CVConfig cfg;
  cfg.grid = std::move(grid);
  cfg.distance.mode = mode;
  cfg.distance.min_overlap = 1;
  return cfg;
}

// Rows 0-2 sit near 0 and rows 3-5 near 5; each row has its own small jitter.
PanelDataset two_clusters(std::mt19937_64& rng) {
  PanelDataset ds(6, 6, 1);
  for (int i = 0; i < 6; ++i)
    for (int t = 0; t < 6; ++t) {
      kernn::Points b = testing::random_points(rng, 4, 1, 0.3);
      b.array() += (i < 3 ? 0.0 : 5.0) + 0.1 * t;
      ds.set_cell(i, t, kernn::kObserved, b);
    }
  return ds;
}

// Direct two-fold score: recompute each validation estimate from scratch.
double direct_two_fold_score(const PanelDataset& ds, const KernelSpec& k, double eta, const CVConfig& cfg) {
  const auto [first, second] = kernn::column_halves(ds.outcomes());
  kernn::DistanceOptions dist = cfg.distance;
  dist.columns.assign(static_cast<std::size_t>(ds.outcomes()), 0);
  for (int s : first) dist.columns[static_cast<std::size_t>(s)] = 1;
  double total = 0.0;
  int cells = 0;
  for (int i = 0; i < ds.units(); ++i)
    for (int t : second) {
      if (!ds.has_label(i, t, kernn::kObserved)) continue;
      const auto row = kernn::distance_row(ds, k, i, t, dist);
      try {
        const auto r = kernn::estimate_from_row(ds, row, i, t, kernn::kObserved, eta, cfg.fallback);
        total += kernn::mmd2_vstat(k, r.estimate, kernn::empirical(ds.cell(i, t).block));
        ++cells;
      } catch (const kernn::EmptyNeighborhoodError&) {
      }
    }
  return total / cells;
}

}  // namespace

TEST_CASE("replicated rows score zero at a large radius") {
  std::mt19937_64 rng(81);
  PanelDataset ds(5, 6, 2);
  for (int t = 0; t < 6; ++t) {
    const kernn::Points b = testing::random_points(rng, 3, 2);
    for (int i = 0; i < 5; ++i) ds.set_cell(i, t, kernn::kObserved, b);
  }
  const auto cfg = two_fold({1e6}, DistanceMode::UStat);
  CHECK(std::abs(kernn::cv_score(ds, KernelSpec::gaussian(1.0), 1e6, cfg)) < 1e-12);
}

TEST_CASE("radius zero on distinct rows falls back to the column mixture") {
  std::mt19937_64 rng(82);
  const PanelDataset ds = testing::random_panel(rng, 6, 6, 3, 1, 1.0);
  const KernelSpec k = KernelSpec::gaussian(1.0);
  const auto cfg = two_fold({0.0});
  double total = 0.0;
  int cells = 0;
  for (int i = 0; i < 6; ++i)
    for (int t = 3; t < 6; ++t) {
      std::vector<std::pair<double, kernn::WeightedSample>> parts;
      for (int j = 0; j < 6; ++j)
        if (j != i) parts.emplace_back(1.0, kernn::empirical(ds.cell(j, t).block));
      total += kernn::mmd2_vstat(k, kernn::mixture(parts), kernn::empirical(ds.cell(i, t).block));
      ++cells;
    }
  const double score = kernn::cv_score(ds, k, 0.0, cfg);
  CHECK(std::isfinite(score));
  CHECK(score == doctest::Approx(total / cells).epsilon(1e-10));
}

TEST_CASE("two-cluster toy prefers a radius between the clusters") {
  std::mt19937_64 rng(83);
  const PanelDataset ds = two_clusters(rng);
  const KernelSpec k = KernelSpec::gaussian(1.0);
  const auto cfg = two_fold({0.0, 1.0, 100.0});
  const auto sel = kernn::select_eta(ds, k, cfg);
  REQUIRE(sel.scopes.size() == 1);
  const auto& s = sel.scopes.front().scores;
  CHECK(s[1] < s[2]);
  CHECK(s[1] < s[0]);
  CHECK(sel.scopes.front().eta_star == 1.0);
  for (std::size_t g = 0; g < 3; ++g) CHECK(s[g] == doctest::Approx(kernn::cv_score(ds, k, cfg.grid[g], cfg)));
}

TEST_CASE("incremental grid scores match direct estimates") {
  std::mt19937_64 rng(84);
  for (int trial = 0; trial < 15; ++trial) {
    const PanelDataset ds = testing::random_panel(rng, 8, 7, 3, 2, 0.7);
    const KernelSpec k = testing::random_kernel(rng);
    const auto mode = trial % 2 == 0 ? DistanceMode::VStat : DistanceMode::UStat;
    auto cfg = two_fold({0.0, 0.05, 0.3, 1.0, 4.0, 1e9}, mode);
    std::vector<double> scores;
    try {
      scores = kernn::select_eta(ds, k, cfg).scopes.front().scores;
    } catch (const std::invalid_argument&) {
      continue;
    }
    for (std::size_t g = 0; g < cfg.grid.size(); ++g)
      CHECK(scores[g] == doctest::Approx(direct_two_fold_score(ds, k, cfg.grid[g], cfg)).epsilon(1e-9));
  }
}

TEST_CASE("single-candidate grid") {
  std::mt19937_64 rng(85);
  const PanelDataset ds = testing::random_panel(rng, 5, 4, 2, 1, 1.0);
  CHECK(kernn::select_eta(ds, KernelSpec::linear(), two_fold({0.7})).scopes.front().eta_star == 0.7);
}

TEST_CASE("ties go to the smallest radius") {
  std::mt19937_64 rng(86);
  PanelDataset ds(4, 4, 1);
  for (int t = 0; t < 4; ++t) {
    const kernn::Points b = testing::random_points(rng, 2, 1);
    for (int i = 0; i < 4; ++i) ds.set_cell(i, t, kernn::kObserved, b);
  }
  const auto sel = kernn::select_eta(ds, KernelSpec::linear(), two_fold({5.0, 2.0, 9.0}));
  CHECK(sel.scopes.front().eta_star == 2.0);
}

TEST_CASE("selected radius is an argmin of the score table") {
  std::mt19937_64 rng(87);
  for (int trial = 0; trial < 10; ++trial) {
    const PanelDataset ds = testing::random_panel(rng, 7, 8, 3, 1, 0.8);
    CVConfig cfg = two_fold({0.0, 0.1, 0.5, 2.0});
    cfg.scheme = trial % 2 ? CvScheme::PerRowKFold : CvScheme::TwoFoldColumns;
    cfg.folds = 3;
    const auto sel = kernn::select_eta(ds, KernelSpec::gaussian(1.0), cfg);
    for (const auto& scope : sel.scopes) {
      const auto at = std::find(cfg.grid.begin(), cfg.grid.end(), scope.eta_star) - cfg.grid.begin();
      for (double s : scope.scores) CHECK(scope.scores[static_cast<std::size_t>(at)] <= s);
    }
  }
}

TEST_CASE("per-row k-fold scopes and half assignment") {
  std::mt19937_64 rng(88);
  const PanelDataset ds = testing::random_panel(rng, 5, 8, 2, 1, 0.9);
  CVConfig cfg = two_fold({0.05, 0.5, 5.0});
  cfg.scheme = CvScheme::PerRowKFold;
  cfg.folds = 2;
  cfg.rows = {1, 3};
  const auto sel = kernn::select_eta(ds, KernelSpec::gaussian(1.0), cfg);
  REQUIRE(sel.scopes.size() == 4);
  CHECK(sel.scopes[0].name == "row=1,half=1");
  CHECK(sel.scopes[3].name == "row=3,half=2");
  CHECK(sel.eta_for(1, 6, 8) == sel.scopes[0].eta_star);
  CHECK(sel.eta_for(1, 1, 8) == sel.scopes[1].eta_star);
  CHECK_THROWS_AS(sel.eta_for(0, 1, 8), std::out_of_range);
}

TEST_CASE("swapping the column halves swaps the per-row radii") {
  std::mt19937_64 rng(89);
  const PanelDataset ds = testing::random_panel(rng, 6, 8, 3, 1, 0.9);
  const PanelDataset swapped = kernn::select_columns(ds, {4, 5, 6, 7, 0, 1, 2, 3});
  CVConfig cfg = two_fold({0.01, 0.1, 0.4, 1.0, 3.0});
  cfg.scheme = CvScheme::PerRowKFold;
  cfg.folds = 2;
  const KernelSpec k = KernelSpec::gaussian(1.0);
  const auto a = kernn::select_eta(ds, k, cfg);
  const auto b = kernn::select_eta(swapped, k, cfg);
  for (int r = 0; r < 6; ++r) {
    const auto& a1 = a.scopes[static_cast<std::size_t>(2 * r)];
    const auto& b2 = b.scopes[static_cast<std::size_t>(2 * r + 1)];
    CHECK(a1.eta_star == b2.eta_star);
    CHECK(a1.scores == b2.scores);
  }
}

TEST_CASE("distances never read validation-half blocks") {
  std::mt19937_64 rng(90);
  const PanelDataset ds = testing::random_panel(rng, 8, 9, 2, 1, 0.8);
  CVConfig cfg = two_fold({0.1, 1.0});
  cfg.distance.workers = 2;
  std::mutex mu;
  std::set<int> seen;
  cfg.distance.on_cell_access = [&](int, int t) {
    std::lock_guard lock(mu);
    seen.insert(t);
  };
  kernn::select_eta(ds, KernelSpec::gaussian(1.0), cfg);
  REQUIRE_FALSE(seen.empty());
  CHECK(*seen.rbegin() < 5);
}

TEST_CASE("relabeling units leaves the score unchanged") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 5; ++trial) {
    const PanelDataset ds = testing::random_panel(rng, 7, 6, 2, 2, 0.8);
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PanelDataset shuffled(7, 6, 2);
    for (int i = 0; i < 7; ++i)
      for (int t = 0; t < 6; ++t) {
        const auto& c = ds.cell(perm[static_cast<std::size_t>(i)], t);
        if (!c.missing()) shuffled.set_cell(i, t, c.label, c.block);
      }
    const auto cfg = two_fold({0.2});
    const KernelSpec k = KernelSpec::gaussian(1.0);
    CHECK(kernn::cv_score(ds, k, 0.2, cfg) == doctest::Approx(kernn::cv_score(shuffled, k, 0.2, cfg)).epsilon(1e-10));
  }
}

TEST_CASE("column-wise direction runs on the transpose") {
  std::mt19937_64 rng(92);
  const PanelDataset ds = testing::random_panel(rng, 6, 8, 2, 1, 0.9);
  CVConfig cfg = two_fold({0.1, 1.0});
  cfg.direction = kernn::Direction::ColumnWise;
  const KernelSpec k = KernelSpec::gaussian(1.0);
  const auto direct = kernn::select_eta(kernn::transpose(ds), k, two_fold({0.1, 1.0}));
  const auto sel = kernn::select_eta(ds, k, cfg);
  CHECK(sel.scopes.front().scores == direct.scopes.front().scores);
  cfg.scheme = CvScheme::PerRowKFold;
  cfg.folds = 2;
  cfg.rows = {0};
  for (const auto& s : kernn::select_eta(ds, k, cfg).scopes)
    for (double v : s.scores) CHECK(v >= 0.0);
}

TEST_CASE("configuration errors") {
  std::mt19937_64 rng(93);
  const PanelDataset ds = testing::random_panel(rng, 4, 4, 2, 1, 1.0);
  const KernelSpec k = KernelSpec::linear();
  CHECK_THROWS_AS(kernn::select_eta(ds, k, two_fold({})), std::invalid_argument);
  CHECK_THROWS_AS(kernn::select_eta(ds, k, two_fold({-1.0})), std::invalid_argument);
  CVConfig bad_k = two_fold({1.0});
  bad_k.scheme = CvScheme::PerRowKFold;
  bad_k.folds = 1;
  CHECK_THROWS_AS(kernn::select_eta(ds, k, bad_k), std::invalid_argument);

  PanelDataset one_col(3, 1, 1);
  one_col.set_cell(0, 0, 1, kernn::Points::Zero(1, 1));
  CHECK_THROWS_AS(kernn::select_eta(one_col, k, two_fold({1.0})), std::invalid_argument);

  PanelDataset first_only(3, 4, 1);
  for (int i = 0; i < 3; ++i)
    for (int t = 0; t < 2; ++t) first_only.set_cell(i, t, 1, kernn::Points::Zero(1, 1));
  CHECK_THROWS_AS(kernn::cv_score(first_only, k, 1.0, two_fold({1.0})), std::invalid_argument);
}

TEST_CASE("grids") {
  const auto g = kernn::geometric_grid(1.0, 100.0, 3);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == doctest::Approx(10.0));
  CHECK(g[2] == 100.0);
  CHECK_THROWS_AS(kernn::geometric_grid(0.0, 1.0, 4), std::invalid_argument);

  std::mt19937_64 rng(94);
  const PanelDataset ds = testing::random_panel(rng, 10, 6, 3, 1, 1.0);
  kernn::DistanceOptions dist;
  dist.mode = DistanceMode::VStat;
  const auto grid = kernn::default_eta_grid(ds, KernelSpec::gaussian(1.0), dist, 20);
  CHECK(grid.size() == 20);
  CHECK(std::is_sorted(grid.begin(), grid.end()));
  CHECK(grid.front() > 0.0);
}

TEST_CASE("enum strings") {
  CHECK(kernn::cv_scheme_from_string(kernn::to_string(CvScheme::PerRowKFold)) == CvScheme::PerRowKFold);
  CHECK(kernn::direction_from_string("column") == kernn::Direction::ColumnWise);
  CHECK_THROWS(kernn::cv_scheme_from_string("loo"));
}
