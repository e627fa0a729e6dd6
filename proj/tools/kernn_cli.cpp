#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kernn/baselines.hpp"
#include "kernn/cv.hpp"
#include "kernn/diagnostics.hpp"
#include "kernn/estimator.hpp"
#include "kernn/experiment.hpp"
#include "kernn/panel.hpp"
#include "kernn/simulation.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

// "linear", "polynomial[:q[:c]]", "gaussian[:sigma]"; a bare "gaussian" uses the median heuristic.
nlohmann::json parse_kernel_arg(const std::string& arg) {
  std::vector<std::string> parts;
  std::stringstream ss(arg);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty()) throw kernn::ConfigError("--kernel: empty");
  const std::string& kind = parts[0];
  try {
    if (kind == "linear") return {{"kind", "linear"}};
    if (kind == "polynomial")
      return {{"kind", "polynomial"},
              {"degree", parts.size() > 1 ? std::stoi(parts[1]) : 2},
              {"offset", parts.size() > 2 ? std::stod(parts[2]) : 1.0}};
    if (kind == "gaussian") {
      nlohmann::json j{{"kind", "gaussian"}};
      if (parts.size() > 1) j["bandwidth"] = std::stod(parts[1]);
      return j;
    }
  } catch (const std::logic_error&) {
    throw kernn::ConfigError("--kernel: malformed '" + arg + "'");
  }
  throw kernn::ConfigError("--kernel: unknown kind '" + kind + "'");
}

std::vector<double> parse_grid(const std::string& arg) {
  std::vector<double> grid;
  std::stringstream ss(arg);
  for (std::string p; std::getline(ss, p, ',');) {
    try {
      grid.push_back(std::stod(p));
    } catch (const std::logic_error&) {
      throw kernn::ConfigError("--grid: malformed value '" + p + "'");
    }
  }
  return grid;
}

kernn::Target parse_target(const std::string& arg) {
  std::vector<int> v;
  std::stringstream ss(arg);
  for (std::string p; std::getline(ss, p, ',');) {
    try {
      v.push_back(std::stoi(p));
    } catch (const std::logic_error&) {
      throw kernn::ConfigError("--target: malformed '" + arg + "'");
    }
  }
  if (v.size() < 2 || v.size() > 3) throw kernn::ConfigError("--target: expected i,t or i,t,a");
  return {v[0], v[1], v.size() == 3 ? v[2] : kernn::kObserved};
}

struct PanelArgs {
  std::string panel;
  std::string kernel = "polynomial:2:1";
  std::string mode = "ustat";
  int min_overlap = 2;
  std::string fallback = "all_observed_in_column";
  int workers = 1;
  int label = kernn::kObserved;
};

void add_panel_args(CLI::App* cmd, PanelArgs& a) {
  cmd->add_option("--panel", a.panel, "panel file (.csv long format or .json)")->required();
  cmd->add_option("--kernel", a.kernel, "linear | polynomial[:q[:c]] | gaussian[:sigma]");
  cmd->add_option("--mode", a.mode, "ustat | vstat");
  cmd->add_option("--min-overlap", a.min_overlap);
  cmd->add_option("--fallback", a.fallback, "all_observed_in_column | empty");
  cmd->add_option("--workers", a.workers);
  cmd->add_option("--label", a.label, "intervention label to estimate");
}

kernn::DistanceOptions distance_options(const PanelArgs& a) {
  kernn::DistanceOptions d;
  try {
    d.mode = kernn::distance_mode_from_string(a.mode);
  } catch (const std::invalid_argument& e) {
    throw kernn::ConfigError(e.what());
  }
  d.min_overlap = a.min_overlap;
  d.workers = a.workers;
  d.label = a.label;
  return d;
}

kernn::PanelDataset load(const std::string& path) {
  return kernn::load_panel(path, kernn::format_for_path(path));
}

int write_results(const kernn::ExperimentConfig& cfg, const std::vector<kernn::ResultRow>& rows) {
  if (cfg.results_path.empty()) {
    kernn::write_results_csv(std::cout, rows, cfg.comparison);
  } else {
    std::ofstream out(cfg.results_path);
    if (!out) throw std::runtime_error("cannot write " + cfg.results_path.string());
    kernn::write_results_csv(out, rows, cfg.comparison);
  }
  std::size_t failed = 0;
  for (const auto& r : rows)
    if (!r.error.empty()) ++failed;
  if (failed > 0) {
    std::cerr << failed << " of " << rows.size() << " targets failed\n";
    return kExitPartial;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel nearest neighbors for distributional matrix completion"};
  app.require_subcommand(1);

  std::string config_path, out_dir, results;
  int workers_override = 0;
  bool no_timing = false;

  auto* run = app.add_subcommand("run", "simulate, estimate and evaluate every configured target");
  run->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  run->add_option("--out", results, "results CSV (overrides output.results)");
  run->add_option("--workers", workers_override);
  run->add_flag("--no-timing", no_timing, "leave wall_ms empty so outputs are reproducible byte for byte");

  auto* compare = app.add_subcommand("compare", "run with kernel-NN vs scalar-NN mean-MSE columns");
  compare->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  compare->add_option("--out", results);
  compare->add_option("--workers", workers_override);
  compare->add_flag("--no-timing", no_timing);

  auto* simulate = app.add_subcommand("simulate", "write panels, truth and masks for every setting");
  simulate->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", out_dir, "output directory (overrides output.simulate_dir)");

  PanelArgs pa;
  std::string target_arg;
  double eta = 0.0;
  auto* estimate = app.add_subcommand("estimate", "estimate one cell's distribution; prints a JSON report");
  add_panel_args(estimate, pa);
  estimate->add_option("--target", target_arg, "i,t[,a]")->required();
  estimate->add_option("--eta", eta)->required();

  std::string grid_arg, scheme = "two_fold_columns", direction = "row";
  int grid_points = 20, folds = 5;
  auto* cv = app.add_subcommand("cv", "cross-validation score table (eta,scope,score)");
  add_panel_args(cv, pa);
  cv->add_option("--grid", grid_arg, "comma-separated radii (default: quantile-based geometric grid)");
  cv->add_option("--grid-points", grid_points);
  cv->add_option("--scheme", scheme, "two_fold_columns | per_row_kfold");
  cv->add_option("--folds", folds);
  cv->add_option("--direction", direction, "row | column");

  double delta = 0.1;
  bool half_delta = false;
  auto* bound = app.add_subcommand("bound", "per-eta data-driven error bound table");
  add_panel_args(bound, pa);
  bound->add_option("--target", target_arg, "i,t[,a]")->required();
  bound->add_option("--grid", grid_arg);
  bound->add_option("--grid-points", grid_points);
  bound->add_option("--delta", delta);
  bound->add_flag("--half-delta", half_delta, "use the delta = 1/2 radius");

  int bN = 100, bT = 100, bn = 10, bd = 2, repeats = 3;
  std::string bkernel = "polynomial:2:1";
  auto* bench = app.add_subcommand("bench", "time the full distance matrix on a simulated panel");
  bench->add_option("--N", bN);
  bench->add_option("--T", bT);
  bench->add_option("--n", bn);
  bench->add_option("--d", bd);
  bench->add_option("--kernel", bkernel);
  bench->add_option("--workers", pa.workers);
  bench->add_option("--repeats", repeats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run || *compare) {
      kernn::ExperimentConfig cfg = kernn::load_config(config_path);
      if (!results.empty()) cfg.results_path = results;
      if (workers_override > 0) cfg.workers = workers_override;
      if (no_timing) cfg.timing = false;
      if (*compare) cfg.comparison = true;
      return write_results(cfg, kernn::run_experiment(cfg));
    }

    if (*simulate) {
      kernn::ExperimentConfig cfg = kernn::load_config(config_path);
      const std::filesystem::path dir = out_dir.empty() ? cfg.simulate_dir : std::filesystem::path(out_dir);
      if (dir.empty()) throw kernn::ConfigError("simulate: no output directory (use --out or output.simulate_dir)");
      for (const auto& p : kernn::run_simulate(cfg, dir)) std::cout << p.string() << '\n';
      return 0;
    }

    if (*bench) {
      kernn::LocationScaleDGP dgp{bN, bT, bn, bd, 1, std::nullopt, 0.0};
      const auto gen = kernn::generate(dgp, kernn::Mcar{0.5});
      const auto k = kernn::resolve_kernel(parse_kernel_arg(bkernel), gen.panel);
      kernn::DistanceOptions dist;
      dist.workers = pa.workers;
      std::cout << "N,T,n,d,workers,repeat,kernel_evals,wall_ms\n";
      for (int r = 0; r < repeats; ++r) {
        kernn::reset_kernel_eval_count();
        const auto start = std::chrono::steady_clock::now();
        kernn::distance_matrix(gen.panel, k, std::nullopt, dist);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        std::cout << bN << ',' << bT << ',' << bn << ',' << bd << ',' << pa.workers << ',' << r << ','
                  << kernn::kernel_eval_count() << ',' << ms << '\n';
      }
      return 0;
    }

    const kernn::PanelDataset ds = load(pa.panel);
    const kernn::KernelSpec k = kernn::resolve_kernel(parse_kernel_arg(pa.kernel), ds);
    const kernn::DistanceOptions dist = distance_options(pa);
    kernn::Fallback fallback;
    try {
      fallback = kernn::fallback_from_string(pa.fallback);
    } catch (const std::invalid_argument& e) {
      throw kernn::ConfigError(e.what());
    }

    if (*estimate) {
      const kernn::Target target = parse_target(target_arg);
      kernn::EstimateOptions opts{eta, dist, fallback};
      opts.distance.label = target.label;
      const auto report = kernn::estimate(ds, k, target.unit, target.outcome, opts);
      nlohmann::json j = report;
      j["kernel"] = k;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    std::vector<double> grid = grid_arg.empty() ? std::vector<double>{} : parse_grid(grid_arg);

    if (*cv) {
      kernn::CVConfig cfg;
      cfg.distance = dist;
      cfg.fallback = fallback;
      cfg.folds = folds;
      try {
        cfg.scheme = kernn::cv_scheme_from_string(scheme);
        cfg.direction = kernn::direction_from_string(direction);
      } catch (const std::invalid_argument& e) {
        throw kernn::ConfigError(e.what());
      }
      cfg.grid = grid.empty() ? kernn::default_eta_grid(ds, k, dist, grid_points) : grid;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw kernn::ConfigError(e.what());
      }
      const auto sel = kernn::select_eta(ds, k, cfg);
      std::cout << "eta,scope,score\n";
      for (const auto& scope : sel.scopes)
        for (std::size_t g = 0; g < sel.grid.size(); ++g)
          std::cout << sel.grid[g] << ',' << scope.name << ',' << scope.scores[g] << '\n';
      for (const auto& scope : sel.scopes)
        std::cerr << scope.name << ": eta* = " << scope.eta_star << '\n';
      return 0;
    }

    if (*bound) {
      const kernn::Target target = parse_target(target_arg);
      kernn::DistanceOptions bdist = dist;
      bdist.label = target.label;
      if (grid.empty()) grid = kernn::default_eta_grid(ds, k, bdist, grid_points);
      const auto blocks = kernn::observed_blocks(ds);
      kernn::BoundOptions opts{kernn::sup_norm(k, kernn::bounding_box(blocks)), delta,
                               half_delta ? kernn::BoundMode::HalfDelta : kernn::BoundMode::General};
      const auto n = ds.uniform_n();
      if (!n) throw kernn::ConfigError("bound: panel needs a uniform sample count");
      const auto sel = kernn::select_eta_by_bound(ds, k, *n, target.unit, target.outcome, grid, bdist, opts);
      std::cout << "eta,bias_term,overlap_term,variance_term,total,contributing_neighbors\n";
      for (const auto& r : sel.reports)
        std::cout << r.eta << ',' << r.bias_term << ',' << r.overlap_term << ',' << r.variance_term << ','
                  << r.total << ',' << r.contributing_neighbors << '\n';
      std::cerr << "eta* = " << sel.eta_star << '\n';
      return 0;
    }
  } catch (const kernn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
