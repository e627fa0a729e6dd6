#include "kernn/kernels.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

namespace kernn {

KernelSpec KernelSpec::linear() { return KernelSpec(LinearKernel{}); }

KernelSpec KernelSpec::polynomial(int degree, double offset) {
  if (degree < 1) throw std::invalid_argument("polynomial kernel: degree must be >= 1");
  if (!(offset >= 0.0) || !std::isfinite(offset))
    throw std::invalid_argument("polynomial kernel: offset must be finite and >= 0");
  return KernelSpec(PolynomialKernel{degree, offset});
}

KernelSpec KernelSpec::gaussian(double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw std::invalid_argument("gaussian kernel: bandwidth must be finite and > 0");
  return KernelSpec(GaussianKernel{bandwidth});
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  os.precision(17);
  visit([&](const auto& kern) {
    using K = std::decay_t<decltype(kern)>;
    if constexpr (std::is_same_v<K, LinearKernel>) {
      os << "linear";
    } else if constexpr (std::is_same_v<K, PolynomialKernel>) {
      os << "polynomial(degree=" << kern.degree << ",offset=" << kern.offset << ")";
    } else {
      os << "gaussian(bandwidth=" << kern.bandwidth << ")";
    }
  });
  return os.str();
}

double eval(const KernelSpec& k, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kernel eval: dimension mismatch");
  return k.visit([&](const auto& kern) { return kern(x.data(), y.data(), x.size()); });
}

Eigen::MatrixXd gram(const KernelSpec& k, const Points& x, const Points& y) {
  if (x.cols() != y.cols()) throw std::invalid_argument("gram: dimension mismatch");
  Eigen::MatrixXd g(x.rows(), y.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  k.visit([&](const auto& kern) {
    for (Eigen::Index a = 0; a < x.rows(); ++a)
      for (Eigen::Index b = 0; b < y.rows(); ++b)
        g(a, b) = kern(x.data() + a * x.cols(), y.data() + b * y.cols(), d);
  });
  return g;
}

double sup_norm(const KernelSpec& k, const Box& box) {
  if (box.lower.size() != box.upper.size() || box.lower.size() == 0)
    throw std::invalid_argument("sup_norm: box bounds must be nonempty and of equal dimension");
  for (Eigen::Index c = 0; c < box.lower.size(); ++c) {
    if (!(box.lower[c] <= box.upper[c]))
      throw std::invalid_argument("sup_norm: lower bound exceeds upper bound");
  }
  // ||x||^2 is convex, so its maximum over the box sits at a corner; each
  // coordinate independently picks the endpoint with larger magnitude.
  double max_sq = 0.0;
  for (Eigen::Index c = 0; c < box.lower.size(); ++c) {
    const double lo = box.lower[c] * box.lower[c];
    const double hi = box.upper[c] * box.upper[c];
    max_sq += std::max(lo, hi);
  }
  return k.visit([&](const auto& kern) -> double {
    using K = std::decay_t<decltype(kern)>;
    if constexpr (std::is_same_v<K, LinearKernel>) {
      return max_sq;
    } else if constexpr (std::is_same_v<K, PolynomialKernel>) {
      return std::pow(max_sq + kern.offset, kern.degree);
    } else {
      return 1.0;
    }
  });
}

Box bounding_box(std::span<const Points* const> blocks, double inflate) {
  Eigen::Index d = -1;
  Box box;
  for (const Points* b : blocks) {
    if (b == nullptr || b->rows() == 0) continue;
    if (d < 0) {
      d = b->cols();
      box.lower = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
      box.upper = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
    } else if (b->cols() != d) {
      throw std::invalid_argument("bounding_box: blocks disagree on dimension");
    }
    box.lower = box.lower.cwiseMin(b->colwise().minCoeff().transpose());
    box.upper = box.upper.cwiseMax(b->colwise().maxCoeff().transpose());
  }
  if (d < 0) throw std::invalid_argument("bounding_box: no points");
  const Eigen::VectorXd pad = (box.upper - box.lower) * inflate;
  box.lower -= pad;
  box.upper += pad;
  return box;
}

double median_heuristic_bandwidth(std::span<const Points* const> blocks, std::size_t max_points) {
  std::vector<const double*> rows;
  Eigen::Index d = -1;
  for (const Points* b : blocks) {
    if (b == nullptr) continue;
    if (b->rows() > 0) {
      if (d >= 0 && b->cols() != d)
        throw std::invalid_argument("median_heuristic_bandwidth: dimension mismatch");
      d = b->cols();
    }
    for (Eigen::Index r = 0; r < b->rows(); ++r) rows.push_back(b->data() + r * b->cols());
  }
  if (rows.size() < 2) throw std::invalid_argument("median_heuristic_bandwidth: need >= 2 points");

  std::vector<const double*> sub;
  if (rows.size() <= max_points) {
    sub = rows;
  } else {
    const double stride = static_cast<double>(rows.size()) / static_cast<double>(max_points);
    for (std::size_t s = 0; s < max_points; ++s)
      sub.push_back(rows[static_cast<std::size_t>(static_cast<double>(s) * stride)]);
  }

  std::vector<double> dist;
  dist.reserve(sub.size() * (sub.size() - 1) / 2);
  for (std::size_t a = 0; a < sub.size(); ++a) {
    for (std::size_t b = a + 1; b < sub.size(); ++b) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double diff = sub[a][c] - sub[b][c];
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), mid);
    med = 0.5 * (med + lower);
  }
  if (!(med > 0.0)) throw std::invalid_argument("median_heuristic_bandwidth: all points coincide");
  return med;
}

std::uint64_t kernel_eval_count() { return detail::kernel_calls; }
void reset_kernel_eval_count() { detail::kernel_calls = 0; }

void to_json(nlohmann::json& j, const KernelSpec& k) {
  k.visit([&](const auto& kern) {
    using K = std::decay_t<decltype(kern)>;
    if constexpr (std::is_same_v<K, LinearKernel>) {
      j = {{"kind", "linear"}};
    } else if constexpr (std::is_same_v<K, PolynomialKernel>) {
      j = {{"kind", "polynomial"}, {"degree", kern.degree}, {"offset", kern.offset}};
    } else {
      j = {{"kind", "gaussian"}, {"bandwidth", kern.bandwidth}};
    }
  });
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return KernelSpec::linear();
  if (kind == "polynomial")
    return KernelSpec::polynomial(j.value("degree", 2), j.value("offset", 1.0));
  if (kind == "gaussian") return KernelSpec::gaussian(j.at("bandwidth").get<double>());
  throw std::invalid_argument("unknown kernel kind: " + kind);
}

}  // namespace kernn
