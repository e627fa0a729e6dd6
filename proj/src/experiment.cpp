#include "kernn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "kernn/baselines.hpp"
#include "kernn/parallel.hpp"
#include "text_io.hpp"

namespace kernn {

namespace {

constexpr std::uint64_t kTagTargets = 0x21;
constexpr std::uint64_t kTagOracleSeed = 0x22;

std::vector<int> int_list(const nlohmann::json& j, const char* key) {
  if (j.is_number_integer()) return {j.get<int>()};
  if (j.is_array()) return j.get<std::vector<int>>();
  throw ConfigError(std::string("dgp.") + key + ": expected an integer or a list of integers");
}

template <class Fn>
auto config_field(const char* key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

std::string p_or_beta(const MissingnessSpec& miss) {
  if (const auto* m = std::get_if<Mcar>(&miss)) return text::format_double(m->p);
  if (const auto* s = std::get_if<Staggered>(&miss))
    return text::format_double(s->beta1) + ";" + text::format_double(s->beta2);
  return "mnar:" + text::format_double(std::get<PropensityMnar>(miss).gamma0);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string opt(const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); }

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag, int a, int b) {
  auto rng = keyed_stream(seed, tag, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b));
  return rng();
}

int wrap(int index, int size) { return index < 0 ? size + index : index; }

std::vector<Target> resolve_targets(const ExperimentConfig& cfg, const PanelDataset& ds, const Setting& s) {
  std::vector<Target> out;
  for (const TargetSpec& spec : cfg.targets) {
    const int i = wrap(spec.unit, ds.units());
    const int t = wrap(spec.outcome, ds.outcomes());
    if (i < 0 || i >= ds.units() || t < 0 || t >= ds.outcomes())
      throw std::out_of_range("target (" + std::to_string(spec.unit) + ", " + std::to_string(spec.outcome) +
                              ") outside the " + std::to_string(ds.units()) + "x" + std::to_string(ds.outcomes()) +
                              " panel");
    out.push_back({i, t, spec.label});
  }
  if (cfg.all_missing || cfg.random_missing > 0) {
    // A target is any cell whose value under the estimated label is not observed.
    std::vector<Target> missing;
    for (int i = 0; i < ds.units(); ++i)
      for (int t = 0; t < ds.outcomes(); ++t) {
        if (cfg.potential_outcomes) {
          const int label = ds.label(i, t) == 1 ? 0 : 1;
          missing.push_back({i, t, label});
        } else if (!ds.has_label(i, t, kObserved)) {
          missing.push_back({i, t, kObserved});
        }
      }
    if (cfg.all_missing) {
      out.insert(out.end(), missing.begin(), missing.end());
    } else {
      auto rng = keyed_stream(s.seed, kTagTargets, static_cast<std::uint64_t>(s.N), static_cast<std::uint64_t>(s.T));
      const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.random_missing), missing.size());
      for (std::size_t a = 0; a < take; ++a) {
        std::uniform_int_distribution<std::size_t> pick(a, missing.size() - 1);
        std::swap(missing[a], missing[pick(rng)]);
      }
      missing.resize(take);
      std::sort(missing.begin(), missing.end(), [](const Target& x, const Target& y) {
        return std::tie(x.unit, x.outcome, x.label) < std::tie(y.unit, y.outcome, y.label);
      });
      out.insert(out.end(), missing.begin(), missing.end());
    }
  }
  return out;
}

// Scalar-NN radius grid from the spread of pairwise distances.
std::vector<double> scalar_grid(const ScalarPanel& sp, int points) {
  std::vector<double> finite;
  for (int i = 0; i < sp.units(); ++i)
    for (int j = i + 1; j < sp.units(); ++j) {
      const double v = snn_distance(sp, i, j, std::nullopt).value;
      if (std::isfinite(v)) finite.push_back(v);
    }
  if (finite.empty()) return {0.0};
  std::sort(finite.begin(), finite.end());
  const double hi = finite[static_cast<std::size_t>(0.95 * static_cast<double>(finite.size() - 1))];
  double lo = finite[static_cast<std::size_t>(0.10 * static_cast<double>(finite.size() - 1))];
  if (!(hi > 0.0)) return {0.0};
  if (!(lo > 0.0)) lo = 1e-3 * hi;
  return geometric_grid(lo, hi, points);
}

struct LabelContext {
  DistanceOptions dist;
  std::vector<double> grid;
  std::optional<CvSelection> cv;
};

std::vector<ResultRow> run_setting(const ExperimentConfig& cfg, const Setting& s) {
  using Clock = std::chrono::steady_clock;
  std::vector<ResultRow> rows;
  const std::string pb = p_or_beta(cfg.missingness);
  auto error_row = [&](Target target, const std::string& message) {
    ResultRow r;
    r.setting = s;
    r.p_or_beta = pb;
    r.target = target;
    r.error = message;
    return r;
  };

  Generated gen;
  std::vector<Target> targets;
  try {
    gen = generate(dgp_for(cfg, s), cfg.missingness, mode_for(cfg, s));
    targets = resolve_targets(cfg, gen.panel, s);
  } catch (const std::exception& e) {
    rows.push_back(error_row({-1, -1, -1}, e.what()));
    return rows;
  }

  const bool columnwise = cfg.direction == Direction::ColumnWise;
  const PanelDataset work = columnwise ? transpose(gen.panel) : gen.panel;
  std::optional<KernelSpec> kernel;
  double k_sup = 0.0;
  try {
    kernel = resolve_kernel(cfg.kernel, work);
    const auto blocks = observed_blocks(work);
    k_sup = sup_norm(*kernel, bounding_box(blocks));
  } catch (const std::exception& e) {
    for (const Target& t : targets) rows.push_back(error_row(t, e.what()));
    return rows;
  }

  std::map<int, LabelContext> contexts;
  auto context_for = [&](int label, const std::vector<Target>& all) -> LabelContext& {
    auto it = contexts.find(label);
    if (it != contexts.end()) return it->second;
    LabelContext ctx;
    ctx.dist.mode = cfg.mode;
    ctx.dist.label = label;
    ctx.dist.min_overlap = cfg.min_overlap;
    if (cfg.eta_policy.kind != EtaPolicy::Kind::Fixed) {
      ctx.grid = cfg.eta_policy.grid.empty() ? default_eta_grid(work, *kernel, ctx.dist, cfg.eta_policy.grid_points)
                                             : cfg.eta_policy.grid;
      CVConfig cv;
      cv.grid = ctx.grid;
      cv.scheme = cfg.eta_policy.scheme;
      cv.folds = cfg.eta_policy.folds;
      cv.distance = ctx.dist;
      cv.fallback = cfg.fallback;
      for (const Target& t : all)
        if (t.label == label) cv.rows.push_back(columnwise ? t.outcome : t.unit);
      std::sort(cv.rows.begin(), cv.rows.end());
      cv.rows.erase(std::unique(cv.rows.begin(), cv.rows.end()), cv.rows.end());
      ctx.cv = select_eta(work, *kernel, cv);
    }
    return contexts.emplace(label, std::move(ctx)).first->second;
  };

  std::map<int, std::pair<ScalarPanel, double>> scalar;  // coordinate -> (panel, selected radius)
  for (const Target& target : targets) {
    const auto start = Clock::now();
    ResultRow r = error_row(target, "");
    try {
      LabelContext& ctx = context_for(target.label, targets);
      const int i = columnwise ? target.outcome : target.unit;
      const int t = columnwise ? target.unit : target.outcome;
      const DistanceRow row = distance_row(work, *kernel, i, t, ctx.dist);

      if (ctx.cv) r.eta_cv = ctx.cv->eta_for(i, t, work.outcomes());
      if (!ctx.grid.empty()) {
        BoundOptions bo{k_sup, cfg.eta_policy.delta, cfg.eta_policy.bound_mode};
        const int n = work.uniform_n().value_or(1);
        r.eta_bound = select_eta_by_bound(work, row, n, i, t, target.label, ctx.grid, bo).eta_star;
      }
      switch (cfg.eta_policy.kind) {
        case EtaPolicy::Kind::Fixed: r.eta = cfg.eta_policy.eta; break;
        case EtaPolicy::Kind::Cv: r.eta = r.eta_cv; break;
        case EtaPolicy::Kind::Bound: r.eta = r.eta_bound; break;
      }

      const EstimateReport report = estimate_from_row(work, row, i, t, target.label, *r.eta, cfg.fallback);
      r.neighbors = static_cast<int>(report.contributors.size());
      r.fallback = report.used_fallback;
      const int arm = cfg.potential_outcomes ? target.label : 0;
      const Eigen::VectorXd mean = gen.truth.mean(target.unit, target.outcome, arm);
      const Eigen::VectorXd cov = gen.truth.cov_diag(target.unit, target.outcome, arm);
      r.mmd2_error = oracle_mmd2_error(report.estimate, mean, cov, *kernel, cfg.oracle_M,
                                       derived_seed(s.seed, kTagOracleSeed, target.unit, target.outcome));

      if (cfg.comparison) {
        r.knn_mean_mse = (report.estimate.mean() - mean).squaredNorm() / static_cast<double>(mean.size());
        double sq = 0.0;
        for (int c = 0; c < work.dim(); ++c) {
          auto it = scalar.find(c);
          if (it == scalar.end()) {
            ScalarPanel sp = reduce_panel(work, Statistic::Mean, c, target.label);
            const double eta = snn_select_eta(sp, scalar_grid(sp, cfg.eta_policy.grid_points), cfg.min_overlap);
            it = scalar.emplace(c, std::make_pair(std::move(sp), eta)).first;
          }
          const double est = snn_estimate(it->second.first, it->second.second, i, t, cfg.min_overlap).value;
          sq += (est - mean(c)) * (est - mean(c));
        }
        r.snn_mean_mse = sq / static_cast<double>(work.dim());
      }
    } catch (const std::exception& e) {
      r = error_row(target, e.what());
    }
    if (cfg.timing)
      r.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds: must be nonempty");
  for (const auto* list : {&sweep_N, &sweep_T, &sweep_n, &sweep_d})
    if (list->empty()) throw ConfigError("dgp: every size list must be nonempty");
  for (int N : sweep_N)
    if (N < 1) throw ConfigError("dgp.N: must be >= 1");
  for (int T : sweep_T)
    if (T < 2) throw ConfigError("dgp.T: must be >= 2");
  for (int n : sweep_n)
    if (n < 1 || (mode == DistanceMode::UStat && n < 2))
      throw ConfigError("dgp.n: must be >= 1 (>= 2 for ustat distances)");
  for (int d : sweep_d)
    if (d < 2 || d % 2 != 0) throw ConfigError("dgp.d: must be a positive even integer");
  if (std::holds_alternative<Staggered>(missingness))
    for (int N : sweep_N)
      if (N % 4 != 0) throw ConfigError("dgp.N: staggered missingness needs N divisible by 4");
  config_field("missingness", [&] {
    kernn::validate(missingness);
    return 0;
  });
  config_field("kernel", [&] {
    nlohmann::json probe = kernel;
    if (probe.value("kind", "") == "gaussian" && !probe.contains("bandwidth")) probe["bandwidth"] = 1.0;
    return kernel_from_json(probe);
  });
  if (min_overlap < 1) throw ConfigError("estimator.min_overlap: must be >= 1");
  if (oracle_M < 10000) throw ConfigError("oracle.M: must be >= 10000");
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  if (targets.empty() && !all_missing && random_missing <= 0) throw ConfigError("targets: must select at least one cell");
  if (eta_policy.kind == EtaPolicy::Kind::Fixed && !(eta_policy.eta >= 0.0))
    throw ConfigError("eta_policy.eta: must be >= 0");
  for (double g : eta_policy.grid)
    if (!(g >= 0.0)) throw ConfigError("eta_policy.grid: radii must be >= 0");
  if (eta_policy.grid_points < 1) throw ConfigError("eta_policy.grid_points: must be >= 1");
  if (eta_policy.scheme == CvScheme::PerRowKFold && eta_policy.folds < 2)
    throw ConfigError("eta_policy.folds: must be >= 2");
  if (!(eta_policy.delta > 0.0 && eta_policy.delta < 1.0)) throw ConfigError("eta_policy.delta: must lie in (0, 1)");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig cfg;
  cfg.kernel = j.value("kernel", nlohmann::json{{"kind", "polynomial"}, {"degree", 2}, {"offset", 1.0}});

  const nlohmann::json dgp = j.value("dgp", nlohmann::json::object());
  cfg.sweep_N = int_list(dgp.value("N", nlohmann::json(100)), "N");
  cfg.sweep_T = int_list(dgp.value("T", nlohmann::json(100)), "T");
  cfg.sweep_n = int_list(dgp.value("n", nlohmann::json(10)), "n");
  cfg.sweep_d = int_list(dgp.value("d", nlohmann::json(2)), "d");
  cfg.dgp.mean_offset = config_field("dgp.mean_offset", [&] { return dgp.value("mean_offset", 0.0); });

  if (j.contains("missingness"))
    cfg.missingness = config_field("missingness", [&] { return missingness_from_json(j.at("missingness")); });
  if (j.contains("potential_outcomes")) {
    const auto& po = j.at("potential_outcomes");
    cfg.potential_outcomes = true;
    cfg.treated_seed_offset = config_field("potential_outcomes", [&] {
      return po.value("treated_seed_offset", cfg.treated_seed_offset);
    });
    cfg.treated_mean_offset = config_field("potential_outcomes", [&] { return po.value("treated_mean_offset", 0.0); });
  }

  const nlohmann::json est = j.value("estimator", nlohmann::json::object());
  config_field("estimator", [&] {
    cfg.mode = distance_mode_from_string(est.value("mode", "ustat"));
    cfg.min_overlap = est.value("min_overlap", 2);
    cfg.fallback = fallback_from_string(est.value("fallback", "all_observed_in_column"));
    cfg.direction = direction_from_string(est.value("direction", "row"));
    return 0;
  });

  const nlohmann::json pol = j.value("eta_policy", nlohmann::json{{"kind", "cv"}});
  config_field("eta_policy", [&] {
    const std::string kind = pol.value("kind", "cv");
    if (kind == "fixed") {
      cfg.eta_policy.kind = EtaPolicy::Kind::Fixed;
      cfg.eta_policy.eta = pol.at("eta").get<double>();
    } else if (kind == "cv") {
      cfg.eta_policy.kind = EtaPolicy::Kind::Cv;
    } else if (kind == "bound") {
      cfg.eta_policy.kind = EtaPolicy::Kind::Bound;
    } else {
      throw ConfigError("eta_policy.kind: unknown policy '" + kind + "'");
    }
    cfg.eta_policy.grid = pol.value("grid", std::vector<double>{});
    cfg.eta_policy.grid_points = pol.value("grid_points", 20);
    cfg.eta_policy.scheme = cv_scheme_from_string(pol.value("scheme", "two_fold_columns"));
    cfg.eta_policy.folds = pol.value("folds", 5);
    cfg.eta_policy.delta = pol.value("delta", 0.1);
    cfg.eta_policy.bound_mode = pol.value("bound_mode", "general") == "half_delta" ? BoundMode::HalfDelta
                                                                                   : BoundMode::General;
    return 0;
  });

  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    config_field("targets", [&] {
      if (t.is_string()) {
        if (t.get<std::string>() != "all_missing") throw ConfigError("targets: unknown selector");
        cfg.all_missing = true;
      } else if (t.is_object()) {
        cfg.random_missing = t.at("random_missing").get<int>();
      } else {
        for (const auto& cell : t) {
          const auto v = cell.get<std::vector<int>>();
          if (v.size() < 2 || v.size() > 3) throw ConfigError("targets: each entry is [i, t] or [i, t, a]");
          cfg.targets.push_back({v[0], v[1], v.size() == 3 ? v[2] : kObserved});
        }
      }
      return 0;
    });
  } else {
    cfg.random_missing = 10;
  }

  config_field("seeds", [&] {
    const auto& s = j.at("seeds");
    if (s.is_object()) {
      const auto from = s.value("from", std::uint64_t{1});
      const int count = s.at("count").get<int>();
      for (int c = 0; c < count; ++c) cfg.seeds.push_back(from + static_cast<std::uint64_t>(c));
    } else {
      cfg.seeds = s.get<std::vector<std::uint64_t>>();
    }
    return 0;
  });

  config_field("oracle", [&] {
    cfg.oracle_M = j.value("oracle", nlohmann::json::object()).value("M", 10000);
    return 0;
  });
  config_field("output", [&] {
    const auto out = j.value("output", nlohmann::json::object());
    cfg.results_path = out.value("results", "");
    cfg.simulate_dir = out.value("simulate_dir", "");
    return 0;
  });
  config_field("workers", [&] {
    cfg.workers = j.value("workers", 1);
    cfg.comparison = j.value("comparison", false);
    cfg.timing = j.value("timing", true);
    return 0;
  });
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

KernelSpec resolve_kernel(const nlohmann::json& spec, const PanelDataset& ds) {
  if (spec.value("kind", "") == "gaussian" && !spec.contains("bandwidth")) {
    const auto blocks = observed_blocks(ds);
    return KernelSpec::gaussian(median_heuristic_bandwidth(blocks));
  }
  return kernel_from_json(spec);
}

std::vector<Setting> expand_settings(const ExperimentConfig& cfg) {
  std::vector<Setting> out;
  for (auto seed : cfg.seeds)
    for (int N : cfg.sweep_N)
      for (int T : cfg.sweep_T)
        for (int n : cfg.sweep_n)
          for (int d : cfg.sweep_d) out.push_back({N, T, n, d, seed});
  return out;
}

LocationScaleDGP dgp_for(const ExperimentConfig& cfg, const Setting& s) {
  LocationScaleDGP dgp = cfg.dgp;
  dgp.N = s.N;
  dgp.T = s.T;
  dgp.n = s.n;
  dgp.d = s.d;
  dgp.seed = s.seed;
  return dgp;
}

GenerationMode mode_for(const ExperimentConfig& cfg, const Setting& s) {
  if (!cfg.potential_outcomes) return Observational{};
  PotentialOutcome po;
  po.treated = dgp_for(cfg, s);
  po.treated.seed = s.seed + cfg.treated_seed_offset;
  po.treated.mean_offset = cfg.treated_mean_offset;
  return po;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<Setting> settings = expand_settings(cfg);
  std::vector<std::vector<ResultRow>> slots(settings.size());
  parallel_for(settings.size(), cfg.workers,
               [&](std::size_t s) { slots[s] = run_setting(cfg, settings[s]); });
  std::vector<ResultRow> rows;
  for (auto& slot : slots)
    for (auto& r : slot) rows.push_back(std::move(r));
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.setting.seed, a.setting.N, a.setting.T, a.setting.n, a.setting.d, a.target.unit,
                    a.target.outcome, a.target.label) < std::tie(b.setting.seed, b.setting.N, b.setting.T,
                                                                 b.setting.n, b.setting.d, b.target.unit,
                                                                 b.target.outcome, b.target.label);
  });
  return rows;
}

void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows, bool comparison) {
  os << "# kernn-results v1\n";
  os << "seed,N,T,n,d,p_or_beta,target,eta,eta_cv,eta_bound,mmd2_error,neighbors,fallback,wall_ms";
  if (comparison) os << ",knn_mean_mse,snn_mean_mse";
  os << ",error\n";
  for (const ResultRow& r : rows) {
    os << r.setting.seed << ',' << r.setting.N << ',' << r.setting.T << ',' << r.setting.n << ','
       << r.setting.d << ',' << csv_field(r.p_or_beta) << ',' << r.target.unit << ':' << r.target.outcome
       << ':' << r.target.label << ',' << opt(r.eta) << ',' << opt(r.eta_cv) << ',' << opt(r.eta_bound) << ','
       << opt(r.mmd2_error) << ',' << r.neighbors << ',' << (r.fallback ? 1 : 0) << ',' << opt(r.wall_ms);
    if (comparison) os << ',' << opt(r.knn_mean_mse) << ',' << opt(r.snn_mean_mse);
    os << ',' << csv_field(r.error) << '\n';
  }
}

void write_mask_csv(std::ostream& os, const std::vector<char>& mask, int units, int outcomes) {
  for (int i = 0; i < units; ++i) {
    for (int t = 0; t < outcomes; ++t) {
      if (t > 0) os << ',';
      os << static_cast<int>(mask[static_cast<std::size_t>(i) * static_cast<std::size_t>(outcomes) +
                                  static_cast<std::size_t>(t)]);
    }
    os << '\n';
  }
}

std::vector<std::filesystem::path> run_simulate(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const Setting& s : expand_settings(cfg)) {
    const Generated g = generate(dgp_for(cfg, s), cfg.missingness, mode_for(cfg, s));
    std::ostringstream stem;
    stem << "N" << s.N << "_T" << s.T << "_n" << s.n << "_d" << s.d << "_seed" << s.seed;
    const auto panel_path = dir / (stem.str() + "_panel.csv");
    const auto truth_path = dir / (stem.str() + "_truth.json");
    const auto mask_path = dir / (stem.str() + "_mask.csv");
    save_panel(g.panel, panel_path, PanelFormat::LongCsv);
    {
      std::ofstream out(truth_path);
      out << nlohmann::json(g.truth).dump() << '\n';
    }
    {
      std::ofstream out(mask_path);
      write_mask_csv(out, g.truth.mask, s.N, s.T);
    }
    written.insert(written.end(), {panel_path, truth_path, mask_path});
  }
  return written;
}

}  // namespace kernn
