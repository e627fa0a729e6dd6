#include "kernn/distributions.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "text_io.hpp"

namespace kernn {

namespace {

constexpr double kWeightTolerance = 1e-10;
constexpr Eigen::Index kMaxMomentFeatures = Eigen::Index{1} << 16;

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Sum_{a,b} w_a v_b k(p_a, q_b), a-major, single accumulator.
double weighted_double_sum(const KernelSpec& k, const Points& p, const Eigen::VectorXd& w,
                           const Points& q, const Eigen::VectorXd& v) {
  const auto d = static_cast<std::size_t>(p.cols());
  return k.visit([&](const auto& kern) {
    double acc = 0.0;
    for (Eigen::Index a = 0; a < p.rows(); ++a) {
      const double* pa = p.data() + a * p.cols();
      for (Eigen::Index b = 0; b < q.rows(); ++b)
        acc += w[a] * v[b] * kern(pa, q.data() + b * q.cols(), d);
    }
    return acc;
  });
}

// Coefficients c_j with k(x, y) = sum_j c_j <x, y>^j, j = 0..q.
std::vector<double> power_coefficients(const KernelSpec& k) {
  return k.visit([](const auto& kern) -> std::vector<double> {
    using K = std::decay_t<decltype(kern)>;
    if constexpr (std::is_same_v<K, LinearKernel>) {
      return {0.0, 1.0};
    } else if constexpr (std::is_same_v<K, PolynomialKernel>) {
      std::vector<double> c(static_cast<std::size_t>(kern.degree) + 1);
      double binom = 1.0;
      for (int j = 0; j <= kern.degree; ++j) {
        c[static_cast<std::size_t>(j)] = binom * std::pow(kern.offset, kern.degree - j);
        binom = binom * (kern.degree - j) / (j + 1);
      }
      return c;
    } else {
      throw std::invalid_argument("moment route requires a linear or polynomial kernel");
    }
  });
}

// Weighted sums of x^{(x)j} for j = 1..degree; entry j-1 has length d^j.
std::vector<Eigen::VectorXd> tensor_moments(const Points& p, const Eigen::VectorXd& w, int degree) {
  const Eigen::Index d = p.cols();
  std::vector<Eigen::VectorXd> sums;
  Eigen::Index len = d;
  for (int j = 1; j <= degree; ++j, len *= d) sums.emplace_back(Eigen::VectorXd::Zero(len));

  Eigen::VectorXd cur, next;
  for (Eigen::Index a = 0; a < p.rows(); ++a) {
    cur = p.row(a).transpose();
    sums[0] += w[a] * cur;
    for (int j = 2; j <= degree; ++j) {
      next.resize(cur.size() * d);
      for (Eigen::Index s = 0; s < cur.size(); ++s)
        for (Eigen::Index c = 0; c < d; ++c) next[s * d + c] = cur[s] * p(a, c);
      cur.swap(next);
      sums[static_cast<std::size_t>(j - 1)] += w[a] * cur;
    }
  }
  return sums;
}

}  // namespace

WeightedSample::WeightedSample(Points points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() == 0) throw std::invalid_argument("WeightedSample: no atoms");
  if (weights_.size() != points_.rows())
    throw std::invalid_argument("WeightedSample: weights and points differ in length");
  double total = 0.0;
  for (Eigen::Index a = 0; a < weights_.size(); ++a) {
    if (!(weights_[a] >= 0.0)) throw std::invalid_argument("WeightedSample: negative weight");
    total += weights_[a];
  }
  if (std::abs(total - 1.0) > kWeightTolerance)
    throw std::invalid_argument("WeightedSample: weights do not sum to 1");
}

Eigen::VectorXd WeightedSample::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
  for (Eigen::Index a = 0; a < size(); ++a) m += weights_[a] * points_.row(a).transpose();
  return m;
}

WeightedSample empirical(const Points& points) {
  if (points.rows() == 0) throw std::invalid_argument("empirical: empty point list");
  const auto m = points.rows();
  return WeightedSample(points, Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)));
}

double mmd2_ustat(const KernelSpec& k, const Points& x, const Points& y) {
  require_same_dim(x.cols(), y.cols(), "mmd2_ustat");
  if (x.rows() != y.rows()) throw std::invalid_argument("mmd2_ustat: sample sizes differ");
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("mmd2_ustat: need at least 2 samples per side");
  const auto d = static_cast<std::size_t>(x.cols());

  // sum_{l != l'} h(x_l, x_l', y_l, y_l') = 2 S_xx + 2 S_yy - 2 S_xy with
  // S_xx, S_yy over l < l' and S_xy over all l != l'.
  return k.visit([&](const auto& kern) {
    double s_xx = 0.0, s_yy = 0.0, s_xy = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      const double* xl = x.data() + l * x.cols();
      const double* yl = y.data() + l * y.cols();
      for (Eigen::Index m = l + 1; m < n; ++m) {
        s_xx += kern(xl, x.data() + m * x.cols(), d);
        s_yy += kern(yl, y.data() + m * y.cols(), d);
      }
      for (Eigen::Index m = 0; m < n; ++m) {
        if (m != l) s_xy += kern(xl, y.data() + m * y.cols(), d);
      }
    }
    const double nn = static_cast<double>(n) * static_cast<double>(n - 1);
    return (2.0 * s_xx + 2.0 * s_yy - 2.0 * s_xy) / nn;
  });
}

double mmd2_vstat(const KernelSpec& k, const WeightedSample& p, const WeightedSample& q) {
  require_same_dim(p.dim(), q.dim(), "mmd2_vstat");
  const double pp = weighted_double_sum(k, p.points(), p.weights(), p.points(), p.weights());
  const double qq = weighted_double_sum(k, q.points(), q.weights(), q.points(), q.weights());
  const double pq = weighted_double_sum(k, p.points(), p.weights(), q.points(), q.weights());
  return pp + qq - 2.0 * pq;
}

bool has_moment_route(const KernelSpec& k, Eigen::Index dim) {
  return k.visit([&](const auto& kern) {
    using K = std::decay_t<decltype(kern)>;
    if constexpr (std::is_same_v<K, LinearKernel>) {
      return true;
    } else if constexpr (std::is_same_v<K, PolynomialKernel>) {
      Eigen::Index len = 1;
      for (int j = 0; j < kern.degree; ++j) {
        len *= dim;
        if (len > kMaxMomentFeatures) return false;
      }
      return true;
    } else {
      return false;
    }
  });
}

double mmd2_vstat_moments(const KernelSpec& k, const WeightedSample& p, const WeightedSample& q) {
  require_same_dim(p.dim(), q.dim(), "mmd2_vstat_moments");
  if (!has_moment_route(k, p.dim()))
    throw std::invalid_argument("mmd2_vstat_moments: kernel has no tractable moment route");
  const auto coef = power_coefficients(k);
  const int degree = static_cast<int>(coef.size()) - 1;
  const auto mp = tensor_moments(p.points(), p.weights(), degree);
  const auto mq = tensor_moments(q.points(), q.weights(), degree);
  double total = 0.0;
  for (int j = 1; j <= degree; ++j) {
    const auto idx = static_cast<std::size_t>(j - 1);
    total += coef[static_cast<std::size_t>(j)] * (mp[idx] - mq[idx]).squaredNorm();
  }
  return total;
}

double mmd2_ustat_moments(const KernelSpec& k, const Points& x, const Points& y) {
  require_same_dim(x.cols(), y.cols(), "mmd2_ustat_moments");
  if (x.rows() != y.rows()) throw std::invalid_argument("mmd2_ustat_moments: sample sizes differ");
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("mmd2_ustat_moments: need at least 2 samples per side");
  if (!has_moment_route(k, x.cols()))
    throw std::invalid_argument("mmd2_ustat_moments: kernel has no tractable moment route");
  const auto coef = power_coefficients(k);
  const int degree = static_cast<int>(coef.size()) - 1;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const auto sx = tensor_moments(x, ones, degree);
  const auto sy = tensor_moments(y, ones, degree);
  double all_pairs = 0.0;
  for (int j = 1; j <= degree; ++j) {
    const auto idx = static_cast<std::size_t>(j - 1);
    all_pairs += coef[static_cast<std::size_t>(j)] * (sx[idx] - sy[idx]).squaredNorm();
  }
  // Remove the l = l' terms of the full double sum.
  const auto d = static_cast<std::size_t>(x.cols());
  const double diag = k.visit([&](const auto& kern) {
    double s = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      const double* xl = x.data() + l * x.cols();
      const double* yl = y.data() + l * y.cols();
      s += kern(xl, xl, d) + kern(yl, yl, d) - 2.0 * kern(xl, yl, d);
    }
    return s;
  });
  return (all_pairs - diag) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double mean_embedding_eval(const KernelSpec& k, const WeightedSample& p, std::span<const double> y) {
  if (static_cast<Eigen::Index>(y.size()) != p.dim())
    throw std::invalid_argument("mean_embedding_eval: dimension mismatch");
  const auto d = y.size();
  return k.visit([&](const auto& kern) {
    double acc = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a)
      acc += p.weights()[a] * kern(p.points().data() + a * p.dim(), y.data(), d);
    return acc;
  });
}

WeightedSample mixture(std::span<const std::pair<double, WeightedSample>> components) {
  if (components.empty()) throw std::invalid_argument("mixture: no components");
  double total = 0.0;
  Eigen::Index atoms = 0;
  const Eigen::Index d = components.front().second.dim();
  for (const auto& [w, dist] : components) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture: invalid weight");
    require_same_dim(dist.dim(), d, "mixture");
    total += w;
    atoms += dist.size();
  }
  if (!(total > 0.0)) throw std::invalid_argument("mixture: all weights are zero");

  Points pts(atoms, d);
  Eigen::VectorXd wts(atoms);
  Eigen::Index at = 0;
  for (const auto& [w, dist] : components) {
    const double scale = w / total;
    pts.middleRows(at, dist.size()) = dist.points();
    wts.segment(at, dist.size()) = scale * dist.weights();
    at += dist.size();
  }
  // Renormalize to absorb rounding in the per-component scaling.
  wts /= wts.sum();
  return WeightedSample(std::move(pts), std::move(wts));
}

WeightedSample compact(const WeightedSample& p) {
  std::vector<Eigen::Index> keep;
  std::vector<double> weight;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    bool merged = false;
    for (std::size_t s = 0; s < keep.size(); ++s) {
      if (p.points().row(keep[s]) == p.points().row(a)) {
        weight[s] += p.weights()[a];
        merged = true;
        break;
      }
    }
    if (!merged) {
      keep.push_back(a);
      weight.push_back(p.weights()[a]);
    }
  }
  Points pts(static_cast<Eigen::Index>(keep.size()), p.dim());
  Eigen::VectorXd wts(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t s = 0; s < keep.size(); ++s) {
    pts.row(static_cast<Eigen::Index>(s)) = p.points().row(keep[s]);
    wts[static_cast<Eigen::Index>(s)] = weight[s];
  }
  return WeightedSample(std::move(pts), std::move(wts));
}

void to_json(nlohmann::json& j, const WeightedSample& p) {
  nlohmann::json pts = nlohmann::json::array();
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < p.dim(); ++c) row.push_back(p.points()(a, c));
    pts.push_back(std::move(row));
  }
  std::vector<double> w(p.weights().data(), p.weights().data() + p.size());
  j = {{"points", std::move(pts)}, {"weights", std::move(w)}};
}

WeightedSample weighted_sample_from_json(const nlohmann::json& j) {
  const auto& pts = j.at("points");
  const auto& w = j.at("weights");
  if (pts.empty()) throw std::invalid_argument("WeightedSample json: no points");
  const auto m = static_cast<Eigen::Index>(pts.size());
  const auto d = static_cast<Eigen::Index>(pts.at(0).size());
  Points p(m, d);
  Eigen::VectorXd wts(m);
  if (static_cast<Eigen::Index>(w.size()) != m)
    throw std::invalid_argument("WeightedSample json: weights and points differ in length");
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& row = pts.at(static_cast<std::size_t>(a));
    if (static_cast<Eigen::Index>(row.size()) != d)
      throw std::invalid_argument("WeightedSample json: ragged points");
    for (Eigen::Index c = 0; c < d; ++c) p(a, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    wts[a] = w.at(static_cast<std::size_t>(a)).get<double>();
  }
  return WeightedSample(std::move(p), std::move(wts));
}

void write_csv(std::ostream& os, const WeightedSample& p) {
  os << "w";
  for (Eigen::Index c = 0; c < p.dim(); ++c) os << ",x" << (c + 1);
  os << '\n';
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    os << text::format_double(p.weights()[a]);
    for (Eigen::Index c = 0; c < p.dim(); ++c) os << ',' << text::format_double(p.points()(a, c));
    os << '\n';
  }
}

WeightedSample read_weighted_sample_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("WeightedSample csv: missing header");
  const auto header = text::split(line);
  if (header.empty() || header[0] != "w") throw std::invalid_argument("WeightedSample csv: bad header");
  const auto d = static_cast<Eigen::Index>(header.size() - 1);
  std::vector<double> w, x;
  while (std::getline(is, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line);
    if (static_cast<Eigen::Index>(f.size()) != d + 1)
      throw std::invalid_argument("WeightedSample csv: ragged row");
    w.push_back(text::parse_double(f[0]));
    for (Eigen::Index c = 1; c <= d; ++c) x.push_back(text::parse_double(f[static_cast<std::size_t>(c)]));
  }
  const auto m = static_cast<Eigen::Index>(w.size());
  Points p = Eigen::Map<Points>(x.data(), m, d);
  return WeightedSample(std::move(p), Eigen::Map<Eigen::VectorXd>(w.data(), m));
}

}  // namespace kernn
