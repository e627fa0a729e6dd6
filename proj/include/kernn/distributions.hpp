#pragma once

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kernn/kernels.hpp"

namespace kernn {

/// A finitely supported distribution: atoms in R^d with nonnegative weights summing to one.
class WeightedSample {
 public:
  /// Validates the invariants; weights must be >= 0 and sum to 1 within 1e-10.
  WeightedSample(Points points, Eigen::VectorXd weights);

  const Points& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }

  /// Weighted mean of the atoms.
  Eigen::VectorXd mean() const;

 private:
  Points points_;
  Eigen::VectorXd weights_;
};

/// Uniform weights over the rows; duplicates stay distinct atoms.
WeightedSample empirical(const Points& points);

/// Paired U-statistic for MMD^2. Requires |X| = |Y| = n >= 2; may be negative.
double mmd2_ustat(const KernelSpec& k, const Points& x, const Points& y);

/// Plug-in (V-statistic) MMD^2 between two finite distributions.
/// Each double sum accumulates a-major into one running total.
double mmd2_vstat(const KernelSpec& k, const WeightedSample& p, const WeightedSample& q);

/// Same quantity as mmd2_vstat for linear/polynomial kernels, evaluated through
/// explicit tensor moments: sum_j C(q,j) c^(q-j) ||E_P x^{(x)j} - E_Q y^{(x)j}||^2.
/// Cost is O(m d^q) instead of O(m^2); throws for the Gaussian kernel.
double mmd2_vstat_moments(const KernelSpec& k, const WeightedSample& p, const WeightedSample& q);

/// Paired U-statistic through tensor moments (linear/polynomial kernels only).
double mmd2_ustat_moments(const KernelSpec& k, const Points& x, const Points& y);

/// Whether the moment route is available for this kernel and dimension.
bool has_moment_route(const KernelSpec& k, Eigen::Index dim);

/// sum_a w_a k(p_a, y)
double mean_embedding_eval(const KernelSpec& k, const WeightedSample& p, std::span<const double> y);

/// Weighted mixture; component weights are normalized, atoms concatenated in order.
WeightedSample mixture(std::span<const std::pair<double, WeightedSample>> components);

/// Merges exactly-equal atoms, keeping first-occurrence order.
WeightedSample compact(const WeightedSample& p);

void to_json(nlohmann::json& j, const WeightedSample& p);
WeightedSample weighted_sample_from_json(const nlohmann::json& j);

/// CSV with header `w,x1,...,xd`.
void write_csv(std::ostream& os, const WeightedSample& p);
WeightedSample read_weighted_sample_csv(std::istream& is);

}  // namespace kernn
