#pragma once

#include "wl/angle_grid.hpp"
#include "wl/models.hpp"

namespace wl {

/// Analytic embedding of a D-torus into the lattice phase space, stored as
/// real grid values of the periodic part plus an implicit identity part on
/// the torus-angle components of the excited sites (lin[comp] names the angle
/// carried by that component, or -1).
struct TorusEmbedding {
  LatticeGeometry geometry;
  ExcitedSites excited;
  AngleGrid grid;
  std::vector<double> omega;  // per angle
  double rho = 0.05;
  std::vector<int> lin;
  Eigen::MatrixXd vals;  // state_dim x grid.total()

  int dim_angles() const { return grid.D; }

  State state_at_node(int t) const {
    State x(geometry.state_dim());
    std::vector<double> th = grid.node_theta(t);
    for (int k = 0; k < geometry.state_dim(); ++k)
      x[k] = vals(k, t) + (lin[k] >= 0 ? th[lin[k]] : 0.0);
    return x;
  }

  /// All node states of K(theta + shift).
  std::vector<State> states_shifted(const std::vector<double>& shift) const {
    std::vector<State> out(grid.total());
    Eigen::VectorXcd ph = grid.shift_phases(shift);
    Eigen::MatrixXd sh(vals.rows(), vals.cols());
    for (int k = 0; k < vals.rows(); ++k)
      sh.row(k) = grid.shifted_grid(vals.row(k).transpose(), ph).transpose();
    for (int t = 0; t < grid.total(); ++t) {
      std::vector<double> th = grid.node_theta(t);
      out[t].resize(geometry.state_dim());
      for (int k = 0; k < geometry.state_dim(); ++k)
        out[t][k] = sh(k, t) + (lin[k] >= 0 ? th[lin[k]] + shift[lin[k]] : 0.0);
    }
    return out;
  }

  State eval(const std::vector<double>& theta) const {
    State x(geometry.state_dim());
    for (int k = 0; k < geometry.state_dim(); ++k) {
      x[k] = grid.D == 0 ? vals(k, 0) : grid.eval_grid_fn(vals.row(k).transpose(), theta);
      if (lin[k] >= 0) x[k] += theta[lin[k]];
    }
    return x;
  }

  /// Per-site analytic norm of the periodic part.
  double site_analytic_norm(int site) const {
    double m = 0.0;
    for (int q = 0; q < geometry.block_dim(); ++q) {
      int k = site * geometry.block_dim() + q;
      if (grid.D == 0)
        m = std::max(m, std::abs(vals(k, 0)));
      else
        m = std::max(m, grid.analytic_norm(grid.to_modes(vals.row(k).transpose()), rho));
    }
    return m;
  }

  /// sup_i min_k Gamma^{-1}(i - c_k) ||K_i||_rho over the periodic part.
  double localized_norm(const DecayFunction& gamma) const {
    if (excited.empty()) throw EmptyExcitedSet("localized torus norm needs excited sites");
    double sup = 0.0;
    for (int i = 0; i < geometry.sites(); ++i) {
      double bn = site_analytic_norm(i);
      if (bn == 0.0) continue;
      double inf = std::numeric_limits<double>::infinity();
      for (int ck : excited.sites) inf = std::min(inf, bn / gamma.gamma_pair(i, ck));
      sup = std::max(sup, inf);
    }
    return sup;
  }
};

/// Reference torus of the uncoupled system: angles ride the excited sites,
/// everything else pinned at the per-site reference point.
inline TorusEmbedding reference_torus(const MapModel& model, int n_theta, double rho = 0.05) {
  TorusEmbedding k;
  k.geometry = model.geometry();
  k.excited = model.excited();
  k.omega = model.angle_frequencies();
  const int l = k.geometry.torus_dirs;
  const int dim = static_cast<int>(k.omega.size());
  if (dim != l * k.excited.count() && dim != 0)
    throw ConfigError("frequency count does not match excited torus directions");
  k.grid = AngleGrid(dim, dim == 0 ? 0 : n_theta);
  k.rho = rho;
  k.lin.assign(k.geometry.state_dim(), -1);
  for (int r = 0; r < k.excited.count() && dim > 0; ++r)
    for (int q = 0; q < l; ++q)
      k.lin[k.excited.sites[r] * k.geometry.block_dim() + q] = r * l + q;
  k.vals = Eigen::MatrixXd::Zero(k.geometry.state_dim(), k.grid.total());
  return k;
}

/// Grid values of DK(theta) . omega (the identity part of the angle
/// components contributes its frequency directly).
inline Eigen::MatrixXd directional_derivative(const TorusEmbedding& K,
                                              const std::vector<double>& omega) {
  const int n = K.geometry.state_dim();
  const int nodes = K.grid.total();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, nodes);
  for (int k = 0; k < n; ++k) {
    if (K.grid.D > 0) {
      Eigen::VectorXcd modes = K.grid.to_modes(K.vals.row(k).transpose());
      for (int m = 0; m < nodes; ++m) {
        std::vector<int> mv = K.grid.mode_vec(m);
        double mw = 0.0;
        for (int q = 0; q < K.grid.D; ++q) mw += mv[q] * omega[q];
        modes[m] *= std::complex<double>(0.0, 2.0 * M_PI * mw);
      }
      out.row(k) = K.grid.to_grid(modes).transpose();
    }
    if (K.lin[k] >= 0) out.row(k).array() += omega[K.lin[k]];
  }
  return out;
}

struct CohomologyResult {
  Eigen::VectorXd phi;      // grid values of the solution
  double min_divisor = 0.0;
  std::vector<std::pair<std::vector<int>, double>> divisors;  // per mode
};

/// Solve phi(theta) - phi(theta + omega) = eta(theta) - mean(eta) mode by
/// mode: phi_m = eta_m / (1 - e^{2 pi i m.omega}), phi_0 = 0.
inline CohomologyResult solve_cohomology(const AngleGrid& grid, const Eigen::VectorXd& eta,
                                         const std::vector<double>& omega,
                                         double divisor_floor = 1e-6) {
  CohomologyResult res;
  if (grid.D == 0) {
    res.phi = Eigen::VectorXd::Zero(1);
    res.min_divisor = std::numeric_limits<double>::infinity();
    return res;
  }
  Eigen::VectorXcd modes = grid.to_modes(eta);
  Eigen::VectorXcd phim = Eigen::VectorXcd::Zero(grid.total());
  res.min_divisor = std::numeric_limits<double>::infinity();
  for (int m = 0; m < grid.total(); ++m) {
    std::vector<int> mv = grid.mode_vec(m);
    bool zero = true;
    double arg = 0.0;
    for (int k = 0; k < grid.D; ++k) {
      if (mv[k] != 0) zero = false;
      arg += mv[k] * omega[k];
    }
    if (zero) continue;
    std::complex<double> div = 1.0 - std::polar(1.0, 2.0 * M_PI * arg);
    double ad = std::abs(div);
    res.divisors.emplace_back(mv, ad);
    res.min_divisor = std::min(res.min_divisor, ad);
    if (ad < divisor_floor) throw SmallDivisor("cohomology divisor below floor");
    phim[m] = modes[m] / div;
  }
  res.phi = grid.to_grid(phim);
  return res;
}

}  // namespace wl
