#include "kernn/simulation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kernn {

namespace {

enum Tag : std::uint64_t {
  kTagRow = 0x11,
  kTagColumn = 0x12,
  kTagMask = 0x13,
  kTagCell = 0x14,
  kTagOracle = 0x15,
  kTagPopulation = 0x16,
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_positive(int v, const char* what) {
  if (v < 1) throw std::invalid_argument(std::string("LocationScaleDGP: ") + what + " must be >= 1");
}

Eigen::MatrixX2d draw_factors(int count, std::uint64_t seed, std::uint64_t tag, double lo1,
                              double hi1, double lo2, double hi2) {
  Eigen::MatrixX2d f(count, 2);
  for (int r = 0; r < count; ++r) {
    auto rng = keyed_stream(seed, tag, static_cast<std::uint64_t>(r));
    f(r, 0) = std::uniform_real_distribution<double>(lo1, hi1)(rng);
    f(r, 1) = std::uniform_real_distribution<double>(lo2, hi2)(rng);
  }
  return f;
}

nlohmann::json matrix_json(const Eigen::MatrixX2d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back({m(r, 0), m(r, 1)});
  return rows;
}

Eigen::MatrixX2d matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixX2d m(static_cast<Eigen::Index>(j.size()), 2);
  for (std::size_t r = 0; r < j.size(); ++r) {
    m(static_cast<Eigen::Index>(r), 0) = j[r].at(0).get<double>();
    m(static_cast<Eigen::Index>(r), 1) = j[r].at(1).get<double>();
  }
  return m;
}

}  // namespace

std::mt19937_64 keyed_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                             std::uint64_t b) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ tag);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

void LocationScaleDGP::validate() const {
  check_positive(N, "N");
  check_positive(T, "T");
  check_positive(n, "n");
  check_positive(d, "d");
  if (d % 2 != 0) throw std::invalid_argument("LocationScaleDGP: d must be even");
  if (!std::isfinite(mean_offset)) throw std::invalid_argument("LocationScaleDGP: mean_offset must be finite");
}

void validate(const MissingnessSpec& miss) {
  if (const auto* m = std::get_if<Mcar>(&miss)) {
    if (!(m->p >= 0.0 && m->p <= 1.0)) throw std::invalid_argument("MCAR: p must lie in [0, 1]");
  } else if (const auto* s = std::get_if<Staggered>(&miss)) {
    if (!(s->beta1 >= 0.0 && s->beta1 <= 1.0 && s->beta2 >= 0.0 && s->beta2 <= 1.0))
      throw std::invalid_argument("Staggered: beta must lie in [0, 1]");
    for (double g : s->gamma1)
      if (!std::isfinite(g)) throw std::invalid_argument("Staggered: gammas must be finite");
    for (double g : s->gamma2)
      if (!std::isfinite(g)) throw std::invalid_argument("Staggered: gammas must be finite");
  } else {
    const auto& p = std::get<PropensityMnar>(miss);
    if (!std::isfinite(p.gamma0) || !std::isfinite(p.gamma1) || !std::isfinite(p.gamma2))
      throw std::invalid_argument("PropensityMNAR: gammas must be finite");
  }
}

TruthHandle::TruthHandle(Eigen::MatrixX2d u, Eigen::MatrixX2d v, int d, double offset,
                         std::optional<Eigen::MatrixX2d> v_treated, double treated_offset)
    : u_(std::move(u)),
      v_(std::move(v)),
      d_(d),
      offset_(offset),
      v_treated_(std::move(v_treated)),
      treated_offset_(treated_offset) {
  if (v_treated_ && v_treated_->rows() != v_.rows())
    throw std::invalid_argument("TruthHandle: treated factors need one row per outcome");
}

Eigen::VectorXd TruthHandle::mean(int i, int t, int arm) const {
  if (arm == 1 && v_treated_) return location_scale_mean(u_(i, 0), (*v_treated_)(t, 0), d_, treated_offset_);
  return location_scale_mean(u_(i, 0), v_(t, 0), d_, offset_);
}

Eigen::VectorXd TruthHandle::cov_diag(int i, int t, int arm) const {
  if (arm == 1 && v_treated_) return location_scale_cov_diag(u_(i, 1), (*v_treated_)(t, 1), d_);
  return location_scale_cov_diag(u_(i, 1), v_(t, 1), d_);
}

void to_json(nlohmann::json& j, const TruthHandle& h) {
  j = {{"d", h.d_}, {"offset", h.offset_}, {"u", matrix_json(h.u_)}, {"v", matrix_json(h.v_)}};
  if (h.v_treated_) {
    j["v_treated"] = matrix_json(*h.v_treated_);
    j["treated_offset"] = h.treated_offset_;
  }
  if (!h.mask.empty()) {
    std::vector<int> mask(h.mask.begin(), h.mask.end());
    j["mask"] = mask;
  }
  if (!h.adoption.empty()) j["adoption"] = h.adoption;
}

TruthHandle truth_from_json(const nlohmann::json& j) {
  std::optional<Eigen::MatrixX2d> vt;
  if (j.contains("v_treated")) vt = matrix_from_json(j.at("v_treated"));
  TruthHandle h(matrix_from_json(j.at("u")), matrix_from_json(j.at("v")), j.at("d").get<int>(),
                j.value("offset", 0.0), std::move(vt), j.value("treated_offset", 0.0));
  if (j.contains("mask"))
    for (int a : j.at("mask").get<std::vector<int>>()) h.mask.push_back(static_cast<char>(a));
  if (j.contains("adoption")) h.adoption = j.at("adoption").get<std::vector<int>>();
  return h;
}

Eigen::VectorXd location_scale_mean(double u1, double v1, int d, double offset) {
  Eigen::VectorXd m(d);
  for (int c = 0; c < d; ++c) m(c) = (c % 2 == 0 ? -1.0 : 1.0) * u1 * v1 + offset;
  return m;
}

Eigen::VectorXd location_scale_cov_diag(double u2, double v2, int d) {
  Eigen::VectorXd s(d);
  for (int c = 0; c < d; ++c) s(c) = u2 * v2 * (c % 2 == 0 ? 1.0 : 0.5);
  return s;
}

Eigen::MatrixX2d draw_row_factors(int units, std::uint64_t seed) {
  return draw_factors(units, seed, kTagRow, -1.0, 1.0, 0.2, 1.0);
}

Eigen::MatrixX2d draw_column_factors(int outcomes, std::uint64_t seed) {
  return draw_factors(outcomes, seed, kTagColumn, 0.2, 1.0, 0.5, 2.0);
}

StaggeredMask gen_staggered_mask(int N, int T, double beta1, double beta2,
                                 const std::array<double, 4>& gamma1,
                                 const std::array<double, 4>& gamma2,
                                 std::span<const double> u1, std::uint64_t seed) {
  if (N < 4 || N % 4 != 0) throw std::invalid_argument("staggered mask: N must be a positive multiple of 4");
  if (T < 1) throw std::invalid_argument("staggered mask: T must be >= 1");
  if (static_cast<int>(u1.size()) != N) throw std::invalid_argument("staggered mask: need one factor per unit");

  StaggeredMask out{std::vector<char>(static_cast<std::size_t>(N) * static_cast<std::size_t>(T), 0),
                    std::vector<int>(static_cast<std::size_t>(N), T + 1)};
  for (int i = 0; i < N; ++i) {
    const int unit = i + 1;
    if (unit > 3 * N / 4) continue;
    const bool first = unit <= N / 4;
    const auto& g = first ? gamma1 : gamma2;
    const double beta = first ? beta1 : beta2;
    const double prev = u1[static_cast<std::size_t>((i + N - 1) % N)];
    const double next = u1[static_cast<std::size_t>((i + 1) % N)];
    const double p = expit(g[0] + g[1] * prev + g[2] * u1[static_cast<std::size_t>(i)] + g[3] * next);
    // Smallest integer t >= T^beta, guarding against pow rounding just above an integer.
    const int start = std::max(1, static_cast<int>(std::ceil(std::pow(static_cast<double>(T), beta) - 1e-9)));
    int tau = T + 1;
    for (int t = start; t <= T; ++t) {
      auto rng = keyed_stream(seed, kTagMask, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t));
      if (std::bernoulli_distribution(p)(rng)) {
        tau = t;
        break;
      }
    }
    out.adoption[static_cast<std::size_t>(i)] = tau;
    for (int t = tau + 1; t <= T; ++t)
      out.treated[static_cast<std::size_t>(i) * static_cast<std::size_t>(T) + static_cast<std::size_t>(t - 1)] = 1;
  }
  return out;
}

StaggeredMask draw_mask(const MissingnessSpec& miss, int T, const Eigen::MatrixX2d& u,
                        std::uint64_t seed) {
  validate(miss);
  const int N = static_cast<int>(u.rows());
  if (const auto* s = std::get_if<Staggered>(&miss)) {
    std::vector<double> u1(u.col(0).data(), u.col(0).data() + N);
    return gen_staggered_mask(N, T, s->beta1, s->beta2, s->gamma1, s->gamma2, u1, seed);
  }
  StaggeredMask out{std::vector<char>(static_cast<std::size_t>(N) * static_cast<std::size_t>(T), 0), {}};
  for (int i = 0; i < N; ++i) {
    double p = 0.0;
    if (const auto* m = std::get_if<Mcar>(&miss)) {
      p = m->p;
    } else {
      const auto& q = std::get<PropensityMnar>(miss);
      p = (q.zero_below && u(i, 0) < *q.zero_below) ? 0.0
                                                    : expit(q.gamma0 + q.gamma1 * u(i, 0) + q.gamma2 * u(i, 1));
    }
    for (int t = 0; t < T; ++t) {
      auto rng = keyed_stream(seed, kTagMask, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t));
      out.treated[static_cast<std::size_t>(i) * static_cast<std::size_t>(T) + static_cast<std::size_t>(t)] =
          std::bernoulli_distribution(p)(rng) ? 1 : 0;
    }
  }
  return out;
}

Points sample_gaussian(const Eigen::VectorXd& mean, const Eigen::VectorXd& cov_diag, int count,
                       std::mt19937_64& rng) {
  const auto d = mean.size();
  Points x(count, d);
  std::normal_distribution<double> z;
  for (int r = 0; r < count; ++r)
    for (Eigen::Index c = 0; c < d; ++c) x(r, c) = mean(c) + std::sqrt(cov_diag(c)) * z(rng);
  return x;
}

Generated generate(const LocationScaleDGP& dgp, const MissingnessSpec& miss, const GenerationMode& mode) {
  dgp.validate();
  validate(miss);
  if (std::holds_alternative<Staggered>(miss) && dgp.N % 4 != 0)
    throw std::invalid_argument("staggered missingness needs N divisible by 4");

  const auto* po = std::get_if<PotentialOutcome>(&mode);
  std::optional<Eigen::MatrixX2d> v_treated;
  if (po) v_treated = draw_column_factors(dgp.T, po->treated.v_seed.value_or(po->treated.seed));

  Generated g{PanelDataset(dgp.N, dgp.T, dgp.d),
              TruthHandle(draw_row_factors(dgp.N, dgp.seed), draw_column_factors(dgp.T, dgp.v_seed.value_or(dgp.seed)),
                          dgp.d, dgp.mean_offset, std::move(v_treated), po ? po->treated.mean_offset : 0.0)};
  StaggeredMask mask = draw_mask(miss, dgp.T, g.truth.u(), dgp.seed);
  const bool staggered = std::holds_alternative<Staggered>(miss);

  for (int i = 0; i < dgp.N; ++i) {
    for (int t = 0; t < dgp.T; ++t) {
      const bool a = mask.treated[static_cast<std::size_t>(i) * static_cast<std::size_t>(dgp.T) +
                                  static_cast<std::size_t>(t)] != 0;
      int label = kMissing;
      int arm = 0;
      if (po) {
        label = a ? 1 : 0;
        arm = label;
      } else if (staggered) {
        label = a ? kMissing : kObserved;
      } else {
        label = a ? kObserved : kMissing;
      }
      if (label == kMissing) continue;
      auto rng = keyed_stream(dgp.seed, kTagCell, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t));
      g.panel.set_cell(i, t, label, sample_gaussian(g.truth.mean(i, t, arm), g.truth.cov_diag(i, t, arm), dgp.n, rng));
    }
  }
  g.truth.mask = std::move(mask.treated);
  g.truth.adoption = std::move(mask.adoption);
  return g;
}

double oracle_mmd2_error(const WeightedSample& estimate, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& cov_diag, const KernelSpec& k, int M,
                         std::uint64_t seed) {
  if (M < 10000) throw std::invalid_argument("oracle_mmd2_error: M must be >= 10^4");
  auto rng = keyed_stream(seed, kTagOracle, 0);
  const WeightedSample truth = empirical(sample_gaussian(mean, cov_diag, M, rng));
  if (has_moment_route(k, estimate.dim())) return mmd2_vstat_moments(k, estimate, truth);
  return mmd2_vstat(k, estimate, truth);
}

MonteCarloValue population_row_distance(const TruthHandle& truth, const KernelSpec& k, int i,
                                        int j, int M_v, int M_x, std::uint64_t seed) {
  if (M_v < 1000 || M_x < 1000)
    throw std::invalid_argument("population_row_distance: need M_v, M_x >= 10^3");
  const int d = truth.dim();
  const bool moments = has_moment_route(k, d);
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < M_v; ++r) {
    auto rng = keyed_stream(seed, kTagPopulation, static_cast<std::uint64_t>(r));
    const double v1 = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
    const double v2 = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    const Points x = sample_gaussian(location_scale_mean(truth.u()(i, 0), v1, d),
                                     location_scale_cov_diag(truth.u()(i, 1), v2, d), M_x, rng);
    const Points y = sample_gaussian(location_scale_mean(truth.u()(j, 0), v1, d),
                                     location_scale_cov_diag(truth.u()(j, 1), v2, d), M_x, rng);
    const double value = moments ? mmd2_ustat_moments(k, x, y) : mmd2_ustat(k, x, y);
    sum += value;
    sum_sq += value * value;
  }
  const double mean = sum / M_v;
  const double var = std::max(0.0, (sum_sq - M_v * mean * mean) / (M_v - 1));
  return {mean, std::sqrt(var / M_v)};
}

void to_json(nlohmann::json& j, const LocationScaleDGP& dgp) {
  j = {{"N", dgp.N}, {"T", dgp.T}, {"n", dgp.n}, {"d", dgp.d}, {"seed", dgp.seed}, {"mean_offset", dgp.mean_offset}};
  if (dgp.v_seed) j["v_seed"] = *dgp.v_seed;
}

LocationScaleDGP dgp_from_json(const nlohmann::json& j) {
  LocationScaleDGP dgp;
  dgp.N = j.value("N", 0);
  dgp.T = j.value("T", 0);
  dgp.n = j.value("n", 0);
  dgp.d = j.value("d", 2);
  dgp.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("v_seed")) dgp.v_seed = j.at("v_seed").get<std::uint64_t>();
  dgp.mean_offset = j.value("mean_offset", 0.0);
  return dgp;
}

void to_json(nlohmann::json& j, const MissingnessSpec& miss) {
  if (const auto* m = std::get_if<Mcar>(&miss)) {
    j = {{"kind", "mcar"}, {"p", m->p}};
  } else if (const auto* s = std::get_if<Staggered>(&miss)) {
    j = {{"kind", "staggered"}, {"beta1", s->beta1}, {"beta2", s->beta2},
         {"gamma1", s->gamma1}, {"gamma2", s->gamma2}};
  } else {
    const auto& p = std::get<PropensityMnar>(miss);
    j = {{"kind", "propensity_mnar"}, {"gamma0", p.gamma0}, {"gamma1", p.gamma1}, {"gamma2", p.gamma2}};
    if (p.zero_below) j["zero_below"] = *p.zero_below;
  }
}

MissingnessSpec missingness_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  MissingnessSpec out;
  if (kind == "mcar") {
    out = Mcar{j.value("p", 0.5)};
  } else if (kind == "staggered") {
    Staggered s;
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    if (j.contains("gamma1")) s.gamma1 = j.at("gamma1").get<std::array<double, 4>>();
    if (j.contains("gamma2")) s.gamma2 = j.at("gamma2").get<std::array<double, 4>>();
    out = s;
  } else if (kind == "propensity_mnar") {
    PropensityMnar p;
    p.gamma0 = j.value("gamma0", p.gamma0);
    p.gamma1 = j.value("gamma1", p.gamma1);
    p.gamma2 = j.value("gamma2", p.gamma2);
    if (j.contains("zero_below")) p.zero_below = j.at("zero_below").get<double>();
    out = p;
  } else {
    throw std::invalid_argument("unknown missingness kind: " + kind);
  }
  validate(out);
  return out;
}

}  // namespace kernn
