#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prefjoint/fit_io.hpp"
#include "prefjoint/io.hpp"
#include "prefjoint/laplace.hpp"
#include "prefjoint/predict.hpp"
#include "prefjoint/simulate.hpp"
#include "prefjoint/version.hpp"

namespace prefjoint {

struct Combination {
  int n_s = 100;
  int n_c = 100;
  std::string tag() const { return std::to_string(n_s) + ":" + std::to_string(n_c); }
};

struct ExperimentPlan {
  std::vector<ScenarioConfig> scenarios;
  std::vector<Combination> combinations;
  int replicas = 30;
  std::vector<ModelKind> models{ModelKind::joint};
  std::uint64_t master_seed = 1;
  int nx = 60, ny = 60;
  Rect bounds{0.0, 1.0, 0.0, 1.0};
  FitConfig fit_config;

  void validate() const {
    if (scenarios.empty() || combinations.empty() || models.empty())
      throw std::invalid_argument("ExperimentPlan: scenarios, combinations and models required");
    if (replicas < 1) throw std::invalid_argument("ExperimentPlan: replicas must be >= 1");
  }
};

inline std::string scenario_tag(const ScenarioConfig& s) {
  if (s.scenario_id != 0) return std::to_string(s.scenario_id);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "c%g_%g", s.beta_prime, s.beta);
  return buf;
}

// Per-replica seed: a deterministic function of the plan coordinates.
inline std::uint64_t replica_seed(std::uint64_t master, const ScenarioConfig& s,
                                  const Combination& c, int replica) {
  std::uint64_t seed = master;
  seed = seed_mix(seed, static_cast<std::uint64_t>(s.scenario_id));
  seed = seed_mix(seed, std::bit_cast<std::uint64_t>(s.beta_prime));
  seed = seed_mix(seed, std::bit_cast<std::uint64_t>(s.beta));
  seed = seed_mix(seed, static_cast<std::uint64_t>(c.n_s));
  seed = seed_mix(seed, static_cast<std::uint64_t>(c.n_c));
  seed = seed_mix(seed, static_cast<std::uint64_t>(replica));
  return seed;
}

// Plan files are flat key=value text; every key has a CLI override.
inline ExperimentPlan parse_plan(const std::map<std::string, std::string>& kv) {
  ExperimentPlan plan;
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    return it == kv.end() ? std::string() : it->second;
  };

  ScenarioConfig base;
  if (!get("phi_v").empty()) base.phi_v = parse_double(get("phi_v"), "phi_v");
  if (!get("sigma_v").empty()) base.sigma_v = parse_double(get("sigma_v"), "sigma_v");
  if (!get("phi_u").empty()) base.phi_u = parse_double(get("phi_u"), "phi_u");
  if (!get("sigma_u").empty()) base.sigma_u = parse_double(get("sigma_u"), "sigma_u");
  if (!get("alpha_prime").empty()) base.alpha_prime = parse_double(get("alpha_prime"), "alpha_prime");
  if (!get("alpha").empty()) base.alpha = parse_double(get("alpha"), "alpha");
  if (!get("alpha_dprime").empty())
    base.alpha_dprime = parse_double(get("alpha_dprime"), "alpha_dprime");
  if (!get("upsilon").empty()) base.upsilon = parse_double(get("upsilon"), "upsilon");

  const std::string scen = get("scenarios").empty() ? "3" : get("scenarios");
  for (const std::string& tok : split(scen, ',')) {
    const std::string t = trim(tok);
    ScenarioConfig s = base;
    if (t == "custom") {
      s.scenario_id = 0;
      s.beta_prime = kv.count("beta_prime") ? parse_double(kv.at("beta_prime"), "beta_prime") : 0.0;
      s.beta = kv.count("beta") ? parse_double(kv.at("beta"), "beta") : 0.0;
    } else {
      s.scenario_id = static_cast<int>(parse_long(t, "scenarios"));
      std::tie(s.beta_prime, s.beta) = preferential_degrees(s.scenario_id);
    }
    plan.scenarios.push_back(s);
  }

  const std::string combos = get("combinations").empty() ? "100:100" : get("combinations");
  for (const std::string& tok : split(combos, ',')) {
    const auto parts = split(trim(tok), ':');
    if (parts.size() != 2) throw std::invalid_argument("combinations: expected ns:nc pairs");
    plan.combinations.push_back(Combination{static_cast<int>(parse_long(trim(parts[0]), "n_s")),
                                            static_cast<int>(parse_long(trim(parts[1]), "n_c"))});
  }

  if (!get("replicas").empty())
    plan.replicas = static_cast<int>(parse_long(get("replicas"), "replicas"));
  if (!get("master_seed").empty())
    plan.master_seed = static_cast<std::uint64_t>(parse_long(get("master_seed"), "master_seed"));
  if (!get("nx").empty()) plan.nx = static_cast<int>(parse_long(get("nx"), "nx"));
  if (!get("ny").empty()) plan.ny = static_cast<int>(parse_long(get("ny"), "ny"));
  if (!get("x_min").empty()) plan.bounds.x_min = parse_double(get("x_min"), "x_min");
  if (!get("x_max").empty()) plan.bounds.x_max = parse_double(get("x_max"), "x_max");
  if (!get("y_min").empty()) plan.bounds.y_min = parse_double(get("y_min"), "y_min");
  if (!get("y_max").empty()) plan.bounds.y_max = parse_double(get("y_max"), "y_max");

  if (!get("models").empty()) {
    plan.models.clear();
    for (const std::string& tok : split(get("models"), ',')) {
      const std::string t = trim(tok);
      if (t == "joint") plan.models.push_back(ModelKind::joint);
      else if (t == "fid") plan.models.push_back(ModelKind::fid_only);
      else if (t == "fdd") plan.models.push_back(ModelKind::fdd_only);
      else throw std::invalid_argument("models: unknown model " + t);
    }
  }

  if (!get("inner_tol").empty()) plan.fit_config.inner_tol = parse_double(get("inner_tol"), "inner_tol");
  if (!get("inner_max_iter").empty())
    plan.fit_config.inner_max_iter = static_cast<int>(parse_long(get("inner_max_iter"), "inner_max_iter"));
  if (!get("outer_tol").empty()) plan.fit_config.outer_tol = parse_double(get("outer_tol"), "outer_tol");
  if (!get("outer_max_iter").empty())
    plan.fit_config.outer_max_iter = static_cast<int>(parse_long(get("outer_max_iter"), "outer_max_iter"));
  if (!get("fd_step").empty()) plan.fit_config.fd_step = parse_double(get("fd_step"), "fd_step");
  if (!get("compute_std_errors").empty())
    plan.fit_config.compute_std_errors = parse_long(get("compute_std_errors"), "compute_std_errors") != 0;
  if (!get("compute_latent_se").empty())
    plan.fit_config.compute_latent_se = parse_long(get("compute_latent_se"), "compute_latent_se") != 0;

  plan.validate();
  return plan;
}

namespace detail {

inline const std::vector<std::string>& run_columns() {
  static const std::vector<std::string> cols = {
      "scenario", "beta_prime_true", "beta_true", "n_s", "n_c", "replica", "model", "seed",
      "status", "converged", "outer_iterations", "nll_marginal",
      "alpha_prime", "alpha", "alpha_dprime", "beta_prime", "beta",
      "log_kappa_v", "log_tau_v", "log_kappa_u", "log_tau_u", "log_upsilon",
      "phi_v", "sigma_v", "phi_u", "sigma_u",
      "se_alpha_prime", "se_alpha", "se_alpha_dprime", "se_beta_prime", "se_beta",
      "se_log_kappa_v", "se_log_tau_v", "se_log_kappa_u", "se_log_tau_u", "se_log_upsilon",
      "rmse", "mae", "hellinger", "wall_time_s", "version", "error"};
  return cols;
}

inline std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

inline std::string run_key(const std::string& scenario, const Combination& c, int replica,
                           const std::string& model) {
  return scenario + "|" + c.tag() + "|" + std::to_string(replica) + "|" + model;
}

}  // namespace detail

struct RunRecord {
  std::map<std::string, std::string> cells;

  std::string line() const {
    std::string out;
    for (const auto& col : detail::run_columns()) {
      if (!out.empty()) out += ',';
      const auto it = cells.find(col);
      if (it != cells.end()) out += detail::sanitize_cell(it->second);
    }
    return out;
  }
};

// One simulation-estimation cell: simulate a replica, fit the requested
// models, score predictions against the truth.
inline std::vector<RunRecord> run_cell(const ScenarioConfig& scenario, const Combination& comb,
                                       int replica, const ExperimentPlan& plan, const GridSpec& grid,
                                       std::map<std::string, Eigen::VectorXd>* fields_out) {
  ScenarioConfig cfg = scenario;
  cfg.n_s = comb.n_s;
  cfg.n_c = comb.n_c;
  cfg.seed = replica_seed(plan.master_seed, scenario, comb, replica);

  const auto [truth, data] = make_scenario(cfg, grid);
  if (fields_out) (*fields_out)["truth"] = truth.s_field;

  std::vector<RunRecord> records;
  for (const ModelKind model : plan.models) {
    RunRecord rec;
    rec.cells["scenario"] = scenario_tag(scenario);
    rec.cells["beta_prime_true"] = fmt_g17(scenario.beta_prime);
    rec.cells["beta_true"] = fmt_g17(scenario.beta);
    rec.cells["n_s"] = std::to_string(comb.n_s);
    rec.cells["n_c"] = std::to_string(comb.n_c);
    rec.cells["replica"] = std::to_string(replica);
    rec.cells["model"] = to_string(model);
    rec.cells["seed"] = std::to_string(cfg.seed);
    rec.cells["version"] = version;

    const auto start = std::chrono::steady_clock::now();
    try {
      const FitResult fr = fit(data, grid, plan.fit_config, model);
      const PredictionFields pred = predict_fields(fr);
      const RmseMae err = rmse_mae(pred.s_hat, truth.s_field);
      const double hell = hellinger(truth.s_field, pred.s_hat);

      rec.cells["status"] = "ok";
      rec.cells["converged"] = fr.converged ? "1" : "0";
      rec.cells["outer_iterations"] = std::to_string(fr.outer_iterations);
      rec.cells["nll_marginal"] = fmt_g17(fr.nll_marginal);
      for (int i = 0; i < fr.layout.size(); ++i) {
        rec.cells[fr.layout.names[i]] = fmt_g17(fr.estimates[i]);
        rec.cells["se_" + fr.layout.names[i]] = fmt_g17(fr.std_errors[i]);
      }
      rec.cells["phi_v"] = fmt_g17(fr.phi_v_hat);
      rec.cells["sigma_v"] = fmt_g17(fr.sigma_v_hat);
      rec.cells["phi_u"] = fmt_g17(fr.phi_u_hat);
      rec.cells["sigma_u"] = fmt_g17(fr.sigma_u_hat);
      rec.cells["rmse"] = fmt_g17(err.rmse);
      rec.cells["mae"] = fmt_g17(err.mae);
      rec.cells["hellinger"] = fmt_g17(hell);
      if (fields_out) (*fields_out)[to_string(model)] = pred.s_hat;
    } catch (const std::exception& e) {
      rec.cells["status"] = "error";
      rec.cells["error"] = e.what();
    }
    const auto stop = std::chrono::steady_clock::now();
    rec.cells["wall_time_s"] =
        fmt_g17(std::chrono::duration<double>(stop - start).count());
    records.push_back(std::move(rec));
  }
  return records;
}

namespace detail {

inline std::map<std::string, std::string> parse_run_row(const std::string& line) {
  const auto& cols = run_columns();
  const auto cells = split(line, ',');
  std::map<std::string, std::string> row;
  for (std::size_t i = 0; i < cols.size() && i < cells.size(); ++i) row[cols[i]] = cells[i];
  return row;
}

inline std::vector<std::map<std::string, std::string>> load_runs(const std::string& path) {
  std::vector<std::map<std::string, std::string>> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!trim(line).empty()) rows.push_back(parse_run_row(line));
  return rows;
}

inline void save_cell_fields(const std::string& dir, const std::string& key, const GridSpec& grid,
                             const std::map<std::string, Eigen::VectorXd>& fields) {
  std::filesystem::create_directories(dir + "/fields");
  const std::string path = dir + "/fields/" + key + ".csv";
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "node,x,y";
  for (const auto& [name, f] : fields) out << ',' << name;
  out << '\n';
  for (int k = 0; k < grid.n_nodes(); ++k) {
    out << k << ',' << fmt_g17(grid.node_x(k)) << ',' << fmt_g17(grid.node_y(k));
    for (const auto& [name, f] : fields) out << ',' << fmt_g17(f[k]);
    out << '\n';
  }
}

}  // namespace detail

// Aggregate bundles (long-format, plot-ready) from the results store.
inline void emit_plot_data(const std::string& results_dir) {
  const auto rows = detail::load_runs(results_dir + "/runs.csv");
  std::vector<const std::map<std::string, std::string>*> ok;
  for (const auto& r : rows)
    if (r.at("status") == "ok") ok.push_back(&r);
  if (ok.empty()) throw std::invalid_argument("emit_plot_data: no completed runs in " + results_dir);

  auto sort_key = [](const std::map<std::string, std::string>* r) {
    return std::make_tuple(r->at("scenario"), parse_long(r->at("n_s"), "n_s"),
                           parse_long(r->at("n_c"), "n_c"), parse_long(r->at("replica"), "replica"),
                           r->at("model"));
  };
  std::sort(ok.begin(), ok.end(),
            [&](const auto* l, const auto* r) { return sort_key(l) < sort_key(r); });

  // Preferential-parameter and intercept bundles use the joint model when the
  // plan ran it, otherwise whichever model is present.
  std::string ref_model = "joint";
  {
    bool has_joint = false;
    for (const auto* r : ok) has_joint |= r->at("model") == "joint";
    if (!has_joint) ref_model = ok.front()->at("model");
  }

  {
    std::ofstream f3(results_dir + "/fig3_preferential.csv");
    f3 << "scenario,combination,replica,beta_prime_hat,beta_hat\n";
    std::ofstream f4(results_dir + "/fig4_intercepts.csv");
    f4 << "scenario,combination,replica,alpha_prime_hat,alpha_hat,alpha_dprime_hat\n";
    std::ofstream f56(results_dir + "/fig56_metrics.csv");
    f56 << "scenario,combination,replica,model,rmse,mae,hellinger\n";
    for (const auto* r : ok) {
      const std::string comb = r->at("n_s") + ":" + r->at("n_c");
      if (r->at("model") == ref_model) {
        f3 << r->at("scenario") << ',' << comb << ',' << r->at("replica") << ','
           << r->at("beta_prime") << ',' << r->at("beta") << '\n';
        f4 << r->at("scenario") << ',' << comb << ',' << r->at("replica") << ','
           << r->at("alpha_prime") << ',' << r->at("alpha") << ',' << r->at("alpha_dprime")
           << '\n';
      }
      f56 << r->at("scenario") << ',' << comb << ',' << r->at("replica") << ',' << r->at("model")
          << ',' << r->at("rmse") << ',' << r->at("mae") << ',' << r->at("hellinger") << '\n';
    }
  }

  // Median/interquartile table across replicas per (param, scenario, combination).
  {
    const std::vector<std::string> params = {"alpha_prime", "alpha",   "alpha_dprime",
                                             "beta_prime",  "beta",    "phi_v",
                                             "sigma_v",     "phi_u",   "sigma_u",
                                             "log_upsilon"};
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> table;
    for (const auto* r : ok) {
      if (r->at("model") != ref_model) continue;
      const std::string comb = r->at("n_s") + ":" + r->at("n_c");
      for (const auto& p : params) {
        const std::string v = r->at(p);
        if (!v.empty()) table[{p, r->at("scenario"), comb}].push_back(parse_double(v, p));
      }
    }
    std::ofstream out(results_dir + "/table2.csv");
    out << "param,scenario,combination,median,q1,q3\n";
    for (const auto& [key, vals] : table) {
      const auto& [param, scenario, comb] = key;
      out << param << ',' << scenario << ',' << comb << ',' << fmt_g17(quantile_midpoint(vals, 0.5))
          << ',' << fmt_g17(quantile_midpoint(vals, 0.25)) << ','
          << fmt_g17(quantile_midpoint(vals, 0.75)) << '\n';
    }
  }

  // Gridded truth and per-model predictions of replica 0 for each cell.
  {
    std::ofstream out(results_dir + "/fig7_fields.csv");
    out << "scenario,combination,node,x,y,truth,pred_fdd,pred_joint,pred_fid\n";
    std::set<std::pair<std::string, std::string>> cells;
    for (const auto* r : ok) cells.insert({r->at("scenario"), r->at("n_s") + ":" + r->at("n_c")});
    for (const auto& [scenario, comb] : cells) {
      std::string key = scenario + "_" + comb + "_0";
      for (char& c : key)
        if (c == ':') c = 'x';
      const std::string path = results_dir + "/fields/" + key + ".csv";
      std::ifstream in(path);
      if (!in) continue;
      std::string line;
      std::getline(in, line);
      const auto header = split(trim(line), ',');
      auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
          if (header[i] == name) return static_cast<int>(i);
        return -1;
      };
      const int c_node = col("node"), c_x = col("x"), c_y = col("y");
      const int c_truth = col("truth"), c_fdd = col("fdd"), c_joint = col("joint"),
                c_fid = col("fid");
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        auto cell = [&](int c) { return c >= 0 && c < static_cast<int>(f.size()) ? f[c] : ""; };
        out << scenario << ',' << comb << ',' << cell(c_node) << ',' << cell(c_x) << ','
            << cell(c_y) << ',' << cell(c_truth) << ',' << cell(c_fdd) << ',' << cell(c_joint)
            << ',' << cell(c_fid) << '\n';
      }
    }
  }
}

// Runs the full plan into output_dir; resumable (completed keys are skipped)
// and parallel over replica cells.
inline void run_experiment(const ExperimentPlan& plan, const std::string& output_dir,
                           int jobs = 1) {
  plan.validate();
  std::filesystem::create_directories(output_dir);
  const GridSpec grid = build_grid(plan.nx, plan.ny, plan.bounds);

  const std::string runs_path = output_dir + "/runs.csv";
  std::set<std::string> done;
  for (const auto& row : detail::load_runs(runs_path)) {
    done.insert(detail::run_key(row.at("scenario"),
                                Combination{static_cast<int>(parse_long(row.at("n_s"), "n_s")),
                                            static_cast<int>(parse_long(row.at("n_c"), "n_c"))},
                                static_cast<int>(parse_long(row.at("replica"), "replica")),
                                row.at("model")));
  }

  struct Task {
    const ScenarioConfig* scenario;
    Combination comb;
    int replica;
  };
  std::vector<Task> tasks;
  for (const auto& s : plan.scenarios)
    for (const auto& c : plan.combinations)
      for (int r = 0; r < plan.replicas; ++r) {
        bool missing = false;
        for (const ModelKind m : plan.models)
          missing |= !done.count(detail::run_key(scenario_tag(s), c, r, to_string(m)));
        if (missing) tasks.push_back(Task{&s, c, r});
      }

  std::ofstream runs(runs_path, std::ios::app);
  if (!runs) throw std::invalid_argument("cannot write " + runs_path);
  if (done.empty() && std::filesystem::file_size(runs_path) == 0) {
    std::string header;
    for (const auto& col : detail::run_columns()) {
      if (!header.empty()) header += ',';
      header += col;
    }
    runs << header << '\n';
    runs.flush();
  }

  std::mutex write_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      std::map<std::string, Eigen::VectorXd> fields;
      const auto records =
          run_cell(*t.scenario, t.comb, t.replica, plan, grid, t.replica == 0 ? &fields : nullptr);
      std::lock_guard<std::mutex> lock(write_mutex);
      for (const auto& rec : records) {
        runs << rec.line() << '\n';
      }
      runs.flush();
      if (t.replica == 0 && !fields.empty()) {
        std::string key = scenario_tag(*t.scenario) + "_" + t.comb.tag() + "_0";
        for (char& c : key)
          if (c == ':') c = 'x';
        detail::save_cell_fields(output_dir, key, grid, fields);
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  runs.close();

  emit_plot_data(output_dir);
}

}  // namespace prefjoint
