// Command-line front end: simulate, fit, experiment, predict, metrics.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "prefjoint/experiment.hpp"
#include "prefjoint/fit_io.hpp"
#include "prefjoint/io.hpp"
#include "prefjoint/laplace.hpp"
#include "prefjoint/predict.hpp"
#include "prefjoint/simulate.hpp"
#include "prefjoint/version.hpp"

namespace {

struct GridArgs {
  int nx = 60, ny = 60;
  prefjoint::Rect bounds;

  void attach(CLI::App* cmd) {
    cmd->add_option("--nx", nx, "grid nodes along x");
    cmd->add_option("--ny", ny, "grid nodes along y");
    cmd->add_option("--x-min", bounds.x_min);
    cmd->add_option("--x-max", bounds.x_max);
    cmd->add_option("--y-min", bounds.y_min);
    cmd->add_option("--y-max", bounds.y_max);
  }
  prefjoint::GridSpec grid() const { return prefjoint::build_grid(nx, ny, bounds); }
};

prefjoint::FitConfig fit_config_from(const std::map<std::string, std::string>& kv) {
  prefjoint::FitConfig cfg;
  using prefjoint::parse_double;
  using prefjoint::parse_long;
  if (kv.count("inner_tol")) cfg.inner_tol = parse_double(kv.at("inner_tol"), "inner_tol");
  if (kv.count("inner_max_iter"))
    cfg.inner_max_iter = static_cast<int>(parse_long(kv.at("inner_max_iter"), "inner_max_iter"));
  if (kv.count("outer_tol")) cfg.outer_tol = parse_double(kv.at("outer_tol"), "outer_tol");
  if (kv.count("outer_max_iter"))
    cfg.outer_max_iter = static_cast<int>(parse_long(kv.at("outer_max_iter"), "outer_max_iter"));
  if (kv.count("fd_step")) cfg.fd_step = parse_double(kv.at("fd_step"), "fd_step");
  if (kv.count("se_fd_step")) cfg.se_fd_step = parse_double(kv.at("se_fd_step"), "se_fd_step");
  if (kv.count("compute_std_errors"))
    cfg.compute_std_errors = parse_long(kv.at("compute_std_errors"), "compute_std_errors") != 0;
  if (kv.count("compute_latent_se"))
    cfg.compute_latent_se = parse_long(kv.at("compute_latent_se"), "compute_latent_se") != 0;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint spatial model for zero-inflated biomass data from survey and "
               "commercial sources under preferential sampling"};
  app.set_version_flag("--version", prefjoint::version);
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "generate a synthetic truth and dataset");
  int scenario = 3, ns = 100, nc = 100;
  std::uint64_t seed = 1;
  double beta_prime = 0.0, beta = 0.0, upsilon = 1.0;
  bool custom = false;
  std::string out_dir = "sim_out";
  GridArgs sim_grid;
  sim->add_option("--scenario", scenario, "sampling scenario 1..5 (0 with --beta/--beta-prime)");
  sim->add_option("--ns", ns, "FID sample size");
  sim->add_option("--nc", nc, "FDD sample size");
  sim->add_option("--seed", seed, "replica seed");
  sim->add_option("--beta-prime", beta_prime);
  sim->add_option("--beta", beta);
  sim->add_flag("--custom", custom, "use --beta-prime/--beta instead of a preset");
  sim->add_option("--upsilon", upsilon, "Gamma sd under presence");
  sim->add_option("--out", out_dir, "output directory")->required();
  sim_grid.attach(sim);

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "fit a model to a dataset CSV");
  std::string data_path, model_name = "joint", config_path, fit_out = "fit_out";
  GridArgs fit_grid;
  fit_cmd->add_option("--data", data_path, "dataset CSV")->required();
  fit_cmd->add_option("--model", model_name, "fid | fdd | joint");
  fit_cmd->add_option("--config", config_path, "key=value fit configuration file");
  fit_cmd->add_option("--out", fit_out, "output directory")->required();
  fit_grid.attach(fit_cmd);

  // ---- experiment ----
  auto* exp = app.add_subcommand("experiment", "run a simulation-estimation plan");
  std::string plan_path, exp_out = "experiment_out";
  int jobs = 1;
  exp->add_option("--plan", plan_path, "plan file (key=value)")->required();
  exp->add_option("--jobs", jobs, "parallel replica workers");
  exp->add_option("--out", exp_out, "results directory")->required();

  // ---- predict ----
  auto* pred = app.add_subcommand("predict", "predicted surfaces from a saved fit");
  std::string fit_dir, pred_out = "prediction.csv";
  pred->add_option("--fit", fit_dir, "directory holding fit.txt and latents.csv")->required();
  pred->add_option("--out", pred_out, "output CSV path")->required();

  // ---- metrics ----
  auto* met = app.add_subcommand("metrics", "score a prediction against a truth");
  std::string truth_path, pred_path;
  met->add_option("--truth", truth_path, "truth CSV (column s)")->required();
  met->add_option("--pred", pred_path, "prediction CSV (column s_hat)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      prefjoint::ScenarioConfig cfg;
      if (custom || scenario == 0) {
        cfg.scenario_id = 0;
        cfg.beta_prime = beta_prime;
        cfg.beta = beta;
      } else {
        cfg = prefjoint::scenario_preset(scenario);
      }
      cfg.n_s = ns;
      cfg.n_c = nc;
      cfg.seed = seed;
      cfg.upsilon = upsilon;
      const prefjoint::GridSpec grid = sim_grid.grid();
      const auto [truth, data] = prefjoint::make_scenario(cfg, grid);
      std::filesystem::create_directories(out_dir);
      prefjoint::save_truth_csv(truth, grid, out_dir + "/truth.csv");
      prefjoint::save_dataset_csv(data, out_dir + "/dataset.csv");
      const auto s = prefjoint::summarize_sources(data);
      std::printf("wrote %s/truth.csv and %s/dataset.csv\n", out_dir.c_str(), out_dir.c_str());
      std::printf("FID: %d locations, %d presences (%.0f%%)\n", s.n_fid, s.pos_fid,
                  100.0 * s.presence_rate_fid());
      std::printf("FDD: %d locations, %d presences (%.0f%%)\n", s.n_fdd, s.pos_fdd,
                  100.0 * s.presence_rate_fdd());
    } else if (*fit_cmd) {
      prefjoint::ModelKind model = prefjoint::ModelKind::joint;
      if (model_name == "fid") model = prefjoint::ModelKind::fid_only;
      else if (model_name == "fdd") model = prefjoint::ModelKind::fdd_only;
      else if (model_name != "joint") throw std::invalid_argument("unknown model " + model_name);

      std::map<std::string, std::string> kv;
      if (!config_path.empty()) kv = prefjoint::read_key_value_file(config_path);
      const prefjoint::FitConfig cfg = fit_config_from(kv);
      const prefjoint::Dataset data = prefjoint::load_dataset_csv(data_path);
      const auto s = prefjoint::summarize_sources(data);
      std::printf("loaded %d observations (FID %d/%d positive, FDD %d/%d positive)\n",
                  data.size(), s.pos_fid, s.n_fid, s.pos_fdd, s.n_fdd);

      const prefjoint::FitResult fr = prefjoint::fit(data, fit_grid.grid(), cfg, model);
      prefjoint::save_fit(fr, fit_out);
      std::printf("converged=%d nll_marginal=%s outer_iterations=%d\n", fr.converged ? 1 : 0,
                  prefjoint::fmt_g17(fr.nll_marginal).c_str(), fr.outer_iterations);
      for (int i = 0; i < fr.layout.size(); ++i)
        std::printf("  %-14s % .6g  (se %.4g)\n", fr.layout.names[i].c_str(), fr.estimates[i],
                    fr.std_errors[i]);
      std::printf("  phi_v=%.4g sigma_v=%.4g phi_u=%.4g sigma_u=%.4g\n", fr.phi_v_hat,
                  fr.sigma_v_hat, fr.phi_u_hat, fr.sigma_u_hat);
      for (const auto& w : fr.warnings) std::printf("  warning: %s\n", w.c_str());
      std::printf("wrote %s/fit.txt and %s/latents.csv\n", fit_out.c_str(), fit_out.c_str());
    } else if (*exp) {
      const auto plan = prefjoint::parse_plan(prefjoint::read_key_value_file(plan_path));
      prefjoint::run_experiment(plan, exp_out, jobs);
      std::printf("experiment complete; results in %s\n", exp_out.c_str());
    } else if (*pred) {
      const prefjoint::FitResult fr = prefjoint::load_fit(fit_dir);
      const prefjoint::PredictionFields p = prefjoint::predict_fields(fr);
      prefjoint::save_prediction(p, fr.grid, pred_out);
      std::printf("wrote %s%s\n", pred_out.c_str(),
                  p.has_se() ? "" : " (no latent SEs in fit; SE columns empty)");
    } else if (*met) {
      const Eigen::VectorXd truth = prefjoint::load_field_column(truth_path, "s");
      const Eigen::VectorXd shat = prefjoint::load_field_column(pred_path, "s_hat");
      const auto err = prefjoint::rmse_mae(shat, truth);
      const double hell = prefjoint::hellinger(truth, shat);
      std::printf("rmse,mae,hellinger\n%s,%s,%s\n", prefjoint::fmt_g17(err.rmse).c_str(),
                  prefjoint::fmt_g17(err.mae).c_str(), prefjoint::fmt_g17(hell).c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
