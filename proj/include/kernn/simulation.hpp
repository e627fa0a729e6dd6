#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kernn/distributions.hpp"
#include "kernn/kernels.hpp"
#include "kernn/panel.hpp"

namespace kernn {

/// Independent RNG stream addressed by (seed, tag, a, b). Streams for different
/// keys are unrelated, so results never depend on generation order.
std::mt19937_64 keyed_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                             std::uint64_t b = 0);

/// Gaussian location-scale family with two-dimensional latent factors.
/// u_i ~ U[-1,1] x U[0.2,1], v_t ~ U[0.2,1] x U[0.5,2];
/// m_{i,t} alternates -u1 v1, +u1 v1 over coordinates and
/// Sigma_{i,t} = u2 v2 diag(1, 1/2, 1, 1/2, ...).
struct LocationScaleDGP {
  int N = 0;
  int T = 0;
  int n = 0;
  int d = 2;
  std::uint64_t seed = 0;
  /// Seed for the column factors when it should differ from `seed`.
  std::optional<std::uint64_t> v_seed;
  /// Added to every mean coordinate (used for the treated arm of potential-outcome panels).
  double mean_offset = 0.0;

  void validate() const;
};

struct Mcar {
  double p = 0.5;
};

struct Staggered {
  double beta1 = 0.3;
  double beta2 = 0.5;
  std::array<double, 4> gamma1{-1.0, 0.5, 1.0, 0.5};
  std::array<double, 4> gamma2{-1.0, 0.5, 1.0, 0.5};
};

/// p_{i,t} = expit(gamma0 + gamma1 u_i(1) + gamma2 u_i(2)), or 0 when
/// u_i(1) < zero_below (units that are never observed).
struct PropensityMnar {
  double gamma0 = 0.0;
  double gamma1 = 1.0;
  double gamma2 = 0.0;
  std::optional<double> zero_below;
};

using MissingnessSpec = std::variant<Mcar, Staggered, PropensityMnar>;

void validate(const MissingnessSpec& miss);

struct Observational {};
struct PotentialOutcome {
  LocationScaleDGP treated;  // only seed, v_seed and mean_offset are read
};
using GenerationMode = std::variant<Observational, PotentialOutcome>;

/// Latent factors and the resulting Gaussian parameters of every cell.
class TruthHandle {
 public:
  TruthHandle() = default;
  TruthHandle(Eigen::MatrixX2d u, Eigen::MatrixX2d v, int d, double offset,
              std::optional<Eigen::MatrixX2d> v_treated, double treated_offset);

  int units() const { return static_cast<int>(u_.rows()); }
  int outcomes() const { return static_cast<int>(v_.rows()); }
  int dim() const { return d_; }
  const Eigen::MatrixX2d& u() const { return u_; }
  const Eigen::MatrixX2d& v() const { return v_; }
  bool has_treated_arm() const { return v_treated_.has_value(); }

  /// Arm 1 reads the treated column factors when present; any other label reads the base arm.
  Eigen::VectorXd mean(int i, int t, int arm = 0) const;
  Eigen::VectorXd cov_diag(int i, int t, int arm = 0) const;

  std::vector<char> mask;    // N*T row-major; 1 where the intervention indicator A is 1
  std::vector<int> adoption; // 1-based adoption times (T+1 = never); empty unless staggered

  friend void to_json(nlohmann::json& j, const TruthHandle& h);
  friend TruthHandle truth_from_json(const nlohmann::json& j);

 private:
  Eigen::MatrixX2d u_;
  Eigen::MatrixX2d v_;
  int d_ = 0;
  double offset_ = 0.0;
  std::optional<Eigen::MatrixX2d> v_treated_;
  double treated_offset_ = 0.0;
};

TruthHandle truth_from_json(const nlohmann::json& j);

/// Gaussian mean and covariance diagonal for the given factors.
Eigen::VectorXd location_scale_mean(double u1, double v1, int d, double offset = 0.0);
Eigen::VectorXd location_scale_cov_diag(double u2, double v2, int d);

Eigen::MatrixX2d draw_row_factors(int units, std::uint64_t seed);
Eigen::MatrixX2d draw_column_factors(int outcomes, std::uint64_t seed);

struct StaggeredMask {
  std::vector<char> treated;  // N*T row-major, A_{i,t} = 1{t > tau_i}
  std::vector<int> adoption;  // 1-based tau_i; T+1 for never-adopters
};

/// Staggered adoption: units 1..N/4 form the first group, N/4+1..3N/4 the
/// second, the rest never adopt. Neighbor factors wrap cyclically.
StaggeredMask gen_staggered_mask(int N, int T, double beta1, double beta2,
                                 const std::array<double, 4>& gamma1,
                                 const std::array<double, 4>& gamma2,
                                 std::span<const double> u1, std::uint64_t seed);

/// Observation indicators for any missingness spec; reads only the row factors.
StaggeredMask draw_mask(const MissingnessSpec& miss, int T, const Eigen::MatrixX2d& u,
                        std::uint64_t seed);

struct Generated {
  PanelDataset panel;
  TruthHandle truth;
};

/// Observational mode labels A=1 cells kObserved, except that staggered panels
/// expose control (A=0) cells and hide treated ones. Potential-outcome mode
/// labels every cell with A and samples it from that arm.
Generated generate(const LocationScaleDGP& dgp, const MissingnessSpec& miss,
                   const GenerationMode& mode = Observational{});

/// n x d Gaussian draws with diagonal covariance.
Points sample_gaussian(const Eigen::VectorXd& mean, const Eigen::VectorXd& cov_diag, int count,
                       std::mt19937_64& rng);

/// mmd2_vstat between the estimate and M fresh draws from N(mean, diag(cov_diag)).
double oracle_mmd2_error(const WeightedSample& estimate, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& cov_diag, const KernelSpec& k, int M,
                         std::uint64_t seed);

struct MonteCarloValue {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of the population row distance between units i and j:
/// the mean over M_v fresh column factors of a size-M_x U-statistic MMD^2.
MonteCarloValue population_row_distance(const TruthHandle& truth, const KernelSpec& k, int i,
                                        int j, int M_v, int M_x, std::uint64_t seed);

void to_json(nlohmann::json& j, const LocationScaleDGP& dgp);
LocationScaleDGP dgp_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const MissingnessSpec& miss);
MissingnessSpec missingness_from_json(const nlohmann::json& j);

}  // namespace kernn
