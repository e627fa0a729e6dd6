#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "kernn/baselines.hpp"
#include "kernn/estimator.hpp"

using kernn::PanelDataset;
using kernn::ScalarPanel;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

kernn::Points col(std::initializer_list<double> xs) {
  kernn::Points p(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index r = 0;
  for (double x : xs) p(r++, 0) = x;
  return p;
}

ScalarPanel random_scalar(std::mt19937_64& rng, int N, int T, double p) {
  ScalarPanel sp(N, T);
  std::bernoulli_distribution keep(p);
  std::normal_distribution<double> z;
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (keep(rng)) sp.set(i, t, z(rng));
  return sp;
}

}  // namespace

TEST_CASE("reduce examples") {
  PanelDataset ds(2, 2, 1);
  ds.set_cell(0, 0, 1, col({1, 3}));
  ds.set_cell(1, 1, 1, col({5}));
  const auto mean = kernn::reduce_panel(ds, kernn::Statistic::Mean);
  CHECK(mean.at(0, 0) == 2.0);
  CHECK(mean.at(1, 1) == 5.0);
  CHECK_FALSE(mean.observed(0, 1));
  PanelDataset two(1, 2, 1);
  two.set_cell(0, 0, 1, col({1, 3}));
  CHECK(*kernn::reduce_panel(two, kernn::Statistic::Std).at(0, 0) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS(kernn::reduce_panel(ds, kernn::Statistic::Std), std::invalid_argument);
  CHECK_THROWS(kernn::reduce_panel(ds, kernn::Statistic::Mean, 1));
}

TEST_CASE("reduce picks the declared coordinate") {
  PanelDataset ds(1, 1, 2);
  kernn::Points b(2, 2);
  b << 1, 10, 3, 30;
  ds.set_cell(0, 0, 1, b);
  CHECK(kernn::reduce_panel(ds, kernn::Statistic::Mean, 1).at(0, 0) == 20.0);
}

TEST_CASE("duplicated rows recover the observed value") {
  ScalarPanel sp(3, 4);
  for (int t = 0; t < 4; ++t) {
    sp.set(0, t, 1.0 + t);
    sp.set(1, t, 1.0 + t);
    sp.set(2, t, 10.0 - t);
  }
  sp.set(0, 2, std::nullopt);
  const auto r = kernn::snn_estimate(sp, 0.0, 0, 2);
  CHECK(r.value == 3.0);
  CHECK(r.neighbors == std::vector<int>{1});
  CHECK_FALSE(r.used_fallback);
}

TEST_CASE("infinite radius on a full mask gives the column mean without the target row") {
  std::mt19937_64 rng(101);
  const ScalarPanel sp = random_scalar(rng, 5, 4, 1.0);
  const auto r = kernn::snn_estimate(sp, kInf, 2, 3);
  double expected = 0.0;
  for (int j : {0, 1, 3, 4}) expected += *sp.at(j, 3);
  CHECK(r.value == doctest::Approx(expected / 4));
}

TEST_CASE("fallback and errors") {
  ScalarPanel sp(3, 3);
  sp.set(0, 0, 0.0);
  sp.set(1, 0, 100.0);
  sp.set(1, 2, 4.0);
  sp.set(2, 2, 8.0);
  const auto r = kernn::snn_estimate(sp, 1.0, 0, 2);
  CHECK(r.used_fallback);
  CHECK(r.value == 6.0);
  ScalarPanel lonely(2, 2);
  lonely.set(0, 0, 1.0);
  CHECK_THROWS(kernn::snn_estimate(lonely, 1.0, 0, 1));
  CHECK_THROWS_AS(kernn::snn_estimate(sp, -1.0, 0, 2), std::invalid_argument);
}

TEST_CASE("scalar distance symmetry and neighborhood monotonicity") {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 50; ++trial) {
    const ScalarPanel sp = random_scalar(rng, 6, 8, 0.6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const auto a = kernn::snn_distance(sp, i, j, 3);
        const auto b = kernn::snn_distance(sp, j, i, 3);
        CHECK((a.value == b.value || (std::isnan(a.value) && std::isnan(b.value))));
        CHECK(a.overlap == b.overlap);
      }
    std::vector<int> last;
    for (double eta : {0.0, 0.2, 1.0, 3.0, kInf}) {
      const auto r = kernn::snn_estimate(sp, eta, 0, 3);
      CHECK(std::includes(r.neighbors.begin(), r.neighbors.end(), last.begin(), last.end()));
      last = r.neighbors;
    }
  }
}

TEST_CASE("scalar nearest neighbors is the n = 1 linear-kernel special case") {
  std::mt19937_64 rng(103);
  const kernn::KernelSpec lin = kernn::KernelSpec::linear();
  for (int trial = 0; trial < 100; ++trial) {
    const PanelDataset ds = testing::random_panel(rng, 7, 6, 1, 1, 0.6);
    const ScalarPanel sp = kernn::reduce_panel(ds, kernn::Statistic::Mean);
    const int i = std::uniform_int_distribution<int>(0, 6)(rng);
    const int t = std::uniform_int_distribution<int>(0, 5)(rng);
    const double eta = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    kernn::EstimateOptions eo;
    eo.eta = eta;
    eo.distance.mode = kernn::DistanceMode::VStat;
    eo.distance.min_overlap = 1;
    bool scalar_empty = false;
    std::optional<kernn::EstimateReport> report;
    kernn::SnnEstimate s;
    try {
      report = kernn::estimate(ds, lin, i, t, eo);
    } catch (const kernn::EmptyNeighborhoodError&) {
    }
    try {
      s = kernn::snn_estimate(sp, eta, i, t);
    } catch (const std::exception&) {
      scalar_empty = true;
    }
    REQUIRE(report.has_value() != scalar_empty);
    if (!report) continue;
    const auto& k = *report;
    for (const auto& [j, d] : k.distances) {
      const auto sd = kernn::snn_distance(sp, i, j, t);
      if (std::isinf(d))
        CHECK(std::isinf(sd.value));
      else
        CHECK(std::abs(d - sd.value) <= 1e-12);
    }
    CHECK(k.neighbors == s.neighbors);
    CHECK(k.used_fallback == s.used_fallback);
    const double kernel_mean = k.estimate.weights().dot(k.estimate.points().col(0));
    CHECK(std::abs(kernel_mean - s.value) <= 1e-12);
  }
}

TEST_CASE("scalar distance carries the V-statistic bias") {
  // E[(x - y)^2] = gap^2 + 2 sigma^2 for independent homoscedastic columns.
  std::mt19937_64 rng(104);
  const double gap = 0.7, sigma = 0.5;
  std::normal_distribution<double> z(0.0, sigma);
  std::vector<double> values;
  for (int rep = 0; rep < 2000; ++rep) {
    ScalarPanel sp(2, 30);
    for (int t = 0; t < 30; ++t) {
      sp.set(0, t, z(rng));
      sp.set(1, t, gap + z(rng));
    }
    values.push_back(kernn::snn_distance(sp, 0, 1, std::nullopt).value);
  }
  const auto ms = testing::mean_se(values);
  CHECK(std::abs(ms.mean - (gap * gap + 2 * sigma * sigma)) < 4.0 * ms.se);
}

TEST_CASE("radius selection") {
  ScalarPanel sp(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int t = 0; t < 6; ++t) sp.set(i, t, (i < 3 ? 0.0 : 10.0) + 0.01 * i + t);
  const std::vector<double> grid{50.0, 1.0, 1000.0};
  CHECK(kernn::snn_select_eta(sp, grid) == 1.0);
  CHECK(kernn::snn_select_eta(sp, {2.0}) == 2.0);
}

TEST_CASE("scalar CSV round trip") {
  std::mt19937_64 rng(105);
  const ScalarPanel sp = random_scalar(rng, 4, 5, 0.5);
  std::stringstream ss;
  kernn::write_scalar_csv(ss, sp);
  const ScalarPanel back = kernn::read_scalar_csv(ss);
  REQUIRE(back.units() == 4);
  REQUIRE(back.outcomes() == 5);
  for (int i = 0; i < 4; ++i)
    for (int t = 0; t < 5; ++t) CHECK(back.at(i, t) == sp.at(i, t));
  std::istringstream ragged("1,2\n3\n");
  CHECK_THROWS(kernn::read_scalar_csv(ragged));
}
