#pragma once

// Random generators and brute-force reference computations shared by the tests.

#include <cmath>
#include <random>
#include <vector>

#include "kernn/distributions.hpp"
#include "kernn/kernels.hpp"
#include "kernn/panel.hpp"

namespace testing {

using kernn::KernelSpec;
using kernn::Points;
using kernn::WeightedSample;

inline Points random_points(std::mt19937_64& rng, int rows, int dim, double scale = 1.0) {
  std::normal_distribution<double> z(0.0, scale);
  Points p(rows, dim);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < dim; ++c) p(r, c) = z(rng);
  return p;
}

inline WeightedSample random_weighted(std::mt19937_64& rng, int atoms, int dim) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::VectorXd w(atoms);
  for (int a = 0; a < atoms; ++a) w(a) = u(rng);
  w /= w.sum();
  return WeightedSample(random_points(rng, atoms, dim), w);
}

inline KernelSpec random_kernel(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  switch (pick(rng)) {
    case 0: return KernelSpec::linear();
    case 1: return KernelSpec::polynomial(std::uniform_int_distribution<int>(1, 3)(rng),
                                          std::uniform_real_distribution<double>(0.0, 2.0)(rng));
    default: return KernelSpec::gaussian(std::uniform_real_distribution<double>(0.5, 3.0)(rng));
  }
}

/// Panel with independent Gaussian blocks; each cell observed with probability p.
inline kernn::PanelDataset random_panel(std::mt19937_64& rng, int N, int T, int n, int d, double p,
                                        int label = kernn::kObserved) {
  kernn::PanelDataset ds(N, T, d);
  std::bernoulli_distribution observed(p);
  std::normal_distribution<double> shift(0.0, 1.0);
  for (int i = 0; i < N; ++i) {
    const double offset = shift(rng);
    for (int t = 0; t < T; ++t) {
      if (!observed(rng)) continue;
      Points block = random_points(rng, n, d);
      block.array() += offset;
      ds.set_cell(i, t, label, std::move(block));
    }
  }
  return ds;
}

/// Direct transcription of the paired U-statistic over ordered pairs l != l'.
inline double brute_ustat(const KernelSpec& k, const Points& x, const Points& y) {
  const auto n = x.rows();
  auto kk = [&](const Points& a, Eigen::Index r, const Points& b, Eigen::Index s) {
    return kernn::eval(k, kernn::row_span(a, r), kernn::row_span(b, s));
  };
  double total = 0.0;
  for (Eigen::Index l = 0; l < n; ++l)
    for (Eigen::Index m = 0; m < n; ++m) {
      if (l == m) continue;
      total += kk(x, l, x, m) + kk(y, l, y, m) - kk(x, l, y, m) - kk(x, m, y, l);
    }
  return total / static_cast<double>(n * (n - 1));
}

/// V-statistic through three explicit Gram matrices.
inline double gram_vstat(const KernelSpec& k, const WeightedSample& p, const WeightedSample& q) {
  const Eigen::VectorXd& w = p.weights();
  const Eigen::VectorXd& v = q.weights();
  return w.dot(kernn::gram(k, p.points(), p.points()) * w) + v.dot(kernn::gram(k, q.points(), q.points()) * v) -
         2.0 * w.dot(kernn::gram(k, p.points(), q.points()) * v);
}

/// Monte-Carlo mean and standard error.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  const double m = s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double var = ss / static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace testing
