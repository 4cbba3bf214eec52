#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "prefjoint/io.hpp"
#include "prefjoint/laplace.hpp"
#include "prefjoint/predict.hpp"

namespace prefjoint {

// A fit is persisted as a flat key=value file plus a per-node latents CSV,
// which is all `predict` needs downstream.
inline void save_fit(const FitResult& fit, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/fit.txt");
    if (!out) throw std::invalid_argument("cannot write " + dir + "/fit.txt");
    out << "model=" << to_string(fit.model) << '\n';
    out << "nx=" << fit.grid.nx << '\n';
    out << "ny=" << fit.grid.ny << '\n';
    out << "x_min=" << fmt_g17(fit.grid.x_min) << '\n';
    out << "x_max=" << fmt_g17(fit.grid.x_max) << '\n';
    out << "y_min=" << fmt_g17(fit.grid.y_min) << '\n';
    out << "y_max=" << fmt_g17(fit.grid.y_max) << '\n';
    out << "has_ipp=" << (fit.layout.has_ipp ? 1 : 0) << '\n';
    out << "n_vessels=" << fit.layout.n_vessels << '\n';
    out << "converged=" << (fit.converged ? 1 : 0) << '\n';
    out << "outer_iterations=" << fit.outer_iterations << '\n';
    out << "nll_evaluations=" << fit.nll_evaluations << '\n';
    out << "nll_marginal=" << fmt_g17(fit.nll_marginal) << '\n';
    out << "outer_grad_norm=" << fmt_g17(fit.outer_grad_norm) << '\n';
    out << "inner_grad_norm=" << fmt_g17(fit.inner_grad_norm) << '\n';
    for (int i = 0; i < fit.layout.size(); ++i) {
      out << "est." << fit.layout.names[i] << '=' << fmt_g17(fit.estimates[i]) << '\n';
      out << "se." << fit.layout.names[i] << '=' << fmt_g17(fit.std_errors[i]) << '\n';
    }
    out << "phi_v=" << fmt_g17(fit.phi_v_hat) << '\n';
    out << "sigma_v=" << fmt_g17(fit.sigma_v_hat) << '\n';
    out << "phi_u=" << fmt_g17(fit.phi_u_hat) << '\n';
    out << "sigma_u=" << fmt_g17(fit.sigma_u_hat) << '\n';
    out << "se_phi_v=" << fmt_g17(fit.se_phi_v) << '\n';
    out << "se_sigma_v=" << fmt_g17(fit.se_sigma_v) << '\n';
    out << "se_phi_u=" << fmt_g17(fit.se_phi_u) << '\n';
    out << "se_sigma_u=" << fmt_g17(fit.se_sigma_u) << '\n';
    for (std::size_t i = 0; i < fit.warnings.size(); ++i)
      out << "warning." << i << '=' << fit.warnings[i] << '\n';
  }
  {
    std::ofstream out(dir + "/latents.csv");
    if (!out) throw std::invalid_argument("cannot write " + dir + "/latents.csv");
    out << "node,x,y,v,u,se_v,se_u\n";
    const bool has_se = fit.latent_se_v.size() == fit.grid.n_nodes();
    for (int k = 0; k < fit.grid.n_nodes(); ++k) {
      out << k << ',' << fmt_g17(fit.grid.node_x(k)) << ',' << fmt_g17(fit.grid.node_y(k)) << ','
          << fmt_g17(fit.latent_modes.v[k]) << ',' << fmt_g17(fit.latent_modes.u[k]) << ',';
      if (has_se) out << fmt_g17(fit.latent_se_v[k]);
      out << ',';
      if (has_se) out << fmt_g17(fit.latent_se_u[k]);
      out << '\n';
    }
  }
}

inline FitResult load_fit(const std::string& dir) {
  const auto kv = read_key_value_file(dir + "/fit.txt");
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(dir + "/fit.txt: missing key " + key);
    return it->second;
  };

  FitResult fit;
  const std::string model = get("model");
  fit.model = model == "fid"   ? ModelKind::fid_only
              : model == "fdd" ? ModelKind::fdd_only
                               : ModelKind::joint;
  fit.grid = build_grid(static_cast<int>(parse_long(get("nx"), "nx")),
                        static_cast<int>(parse_long(get("ny"), "ny")),
                        Rect{parse_double(get("x_min"), "x_min"), parse_double(get("x_max"), "x_max"),
                             parse_double(get("y_min"), "y_min"), parse_double(get("y_max"), "y_max")});
  fit.layout = ParamLayout::make(parse_long(get("has_ipp"), "has_ipp") != 0,
                                 static_cast<int>(parse_long(get("n_vessels"), "n_vessels")));
  fit.converged = parse_long(get("converged"), "converged") != 0;
  fit.outer_iterations = static_cast<int>(parse_long(get("outer_iterations"), "outer_iterations"));
  fit.nll_marginal = parse_double(get("nll_marginal"), "nll_marginal");

  fit.estimates.resize(fit.layout.size());
  fit.std_errors.resize(fit.layout.size());
  for (int i = 0; i < fit.layout.size(); ++i) {
    fit.estimates[i] = parse_double(get("est." + fit.layout.names[i]), fit.layout.names[i]);
    fit.std_errors[i] = parse_double(get("se." + fit.layout.names[i]), fit.layout.names[i]);
  }
  fit.theta_hat = fit.layout.unpack(fit.estimates);
  fit.phi_v_hat = parse_double(get("phi_v"), "phi_v");
  fit.sigma_v_hat = parse_double(get("sigma_v"), "sigma_v");
  fit.phi_u_hat = parse_double(get("phi_u"), "phi_u");
  fit.sigma_u_hat = parse_double(get("sigma_u"), "sigma_u");

  const int N = fit.grid.n_nodes();
  fit.latent_modes.v = load_field_column(dir + "/latents.csv", "v");
  fit.latent_modes.u = load_field_column(dir + "/latents.csv", "u");
  if (fit.latent_modes.v.size() != N)
    throw std::invalid_argument(dir + "/latents.csv: node count does not match grid");
  std::ifstream probe(dir + "/latents.csv");
  std::string header, first;
  std::getline(probe, header);
  if (std::getline(probe, first) && split(first, ',').size() == 7 &&
      !trim(split(first, ',')[5]).empty()) {
    fit.latent_se_v = load_field_column(dir + "/latents.csv", "se_v");
    fit.latent_se_u = load_field_column(dir + "/latents.csv", "se_u");
  }
  return fit;
}

inline void save_prediction(const PredictionFields& p, const GridSpec& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "node,x,y,pi_hat,mu_hat,s_hat,se_z,se_y\n";
  for (int k = 0; k < g.n_nodes(); ++k) {
    out << k << ',' << fmt_g17(g.node_x(k)) << ',' << fmt_g17(g.node_y(k)) << ','
        << fmt_g17(p.pi_hat[k]) << ',' << fmt_g17(p.mu_hat[k]) << ',' << fmt_g17(p.s_hat[k])
        << ',';
    if (p.has_se()) out << fmt_g17(p.se_z[k]);
    out << ',';
    if (p.has_se()) out << fmt_g17(p.se_y[k]);
    out << '\n';
  }
}

}  // namespace prefjoint
