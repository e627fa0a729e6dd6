#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

#include <Eigen/Core>
#include <json.hpp>

namespace kernn {

/// Row-major point cloud: one measurement per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const Points& p, Eigen::Index r) {
  return {p.data() + r * p.cols(), static_cast<std::size_t>(p.cols())};
}

namespace detail {
// Per-thread count of kernel evaluations; used to audit algorithmic cost.
inline thread_local std::uint64_t kernel_calls = 0;

inline double dot(const double* x, const double* y, std::size_t d) {
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += x[c] * y[c];
  return s;
}
}  // namespace detail

struct LinearKernel {
  double operator()(const double* x, const double* y, std::size_t d) const {
    ++detail::kernel_calls;
    return detail::dot(x, y, d);
  }
};

struct PolynomialKernel {
  int degree = 2;
  double offset = 1.0;

  double operator()(const double* x, const double* y, std::size_t d) const {
    ++detail::kernel_calls;
    const double base = detail::dot(x, y, d) + offset;
    double r = base;
    for (int q = 1; q < degree; ++q) r *= base;
    return r;
  }
};

struct GaussianKernel {
  double bandwidth = 1.0;

  double operator()(const double* x, const double* y, std::size_t d) const {
    ++detail::kernel_calls;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = x[c] - y[c];
      s += diff * diff;
    }
    return std::exp(-s / (bandwidth * bandwidth));
  }
};

/// A reproducing kernel on R^d. Immutable once built; use the named constructors.
class KernelSpec {
 public:
  using Variant = std::variant<LinearKernel, PolynomialKernel, GaussianKernel>;

  static KernelSpec linear();
  static KernelSpec polynomial(int degree, double offset = 1.0);
  static KernelSpec gaussian(double bandwidth);

  const Variant& variant() const { return kernel_; }
  bool is_gaussian() const { return std::holds_alternative<GaussianKernel>(kernel_); }
  std::string describe() const;

  /// Calls `fn` with the concrete kernel functor so inner loops avoid a visit per evaluation.
  template <class Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), kernel_);
  }

 private:
  explicit KernelSpec(Variant v) : kernel_(v) {}
  Variant kernel_;
};

/// Axis-aligned box used for sup-norm bounds.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

double eval(const KernelSpec& k, std::span<const double> x, std::span<const double> y);

/// G(a, b) = k(X_a, Y_b).
Eigen::MatrixXd gram(const KernelSpec& k, const Points& x, const Points& y);

/// sup over the box of k(x, x).
double sup_norm(const KernelSpec& k, const Box& box);

/// Componentwise min/max of the points, widened by `inflate` times the range on each side.
Box bounding_box(std::span<const Points* const> blocks, double inflate = 0.01);

/// Median pairwise Euclidean distance over at most `max_points` pooled rows (strided subsample).
double median_heuristic_bandwidth(std::span<const Points* const> blocks,
                                  std::size_t max_points = 2000);

std::uint64_t kernel_eval_count();
void reset_kernel_eval_count();

void to_json(nlohmann::json& j, const KernelSpec& k);
KernelSpec kernel_from_json(const nlohmann::json& j);

}  // namespace kernn
