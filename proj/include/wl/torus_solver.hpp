#pragma once

#include "wl/splitting.hpp"

namespace wl {

struct TorusSolveOptions {
  double tol = 1e-12;
  int max_iter = 25;
  double divisor_floor = 1e-6;
  int block_iter_max = 400;
  double block_tol = 1e-15;
  SplittingOptions split;
};

struct TorusSolveResult {
  TorusEmbedding K;
  Splitting split;
  std::vector<double> residual_history;
  double residual = 0.0;
  CohomologyResult last_center_modes;  // divisor diagnostics of the center solve
};

namespace detail {

// Solve G(theta) xi(theta) - xi(theta+omega) = rhs(theta) on the grid for a
// uniformly contracting reduced cocycle G (stable block): forward iteration
// of xi(theta+omega) = G(theta) xi(theta) - rhs(theta).
inline std::vector<Eigen::VectorXd> solve_block_stable(const AngleGrid& grid,
                                                       const std::vector<double>& omega,
                                                       const std::vector<Eigen::MatrixXd>& g,
                                                       const std::vector<Eigen::VectorXd>& rhs,
                                                       const TorusSolveOptions& opt) {
  const int nodes = grid.total();
  const int d = static_cast<int>(g[0].rows());
  std::vector<double> neg = omega;
  for (double& w : neg) w = -w;
  Eigen::VectorXcd ph_bwd = grid.shift_phases(neg);
  std::vector<Eigen::VectorXd> xi(nodes, Eigen::VectorXd::Zero(d));
  Eigen::VectorXd fn(nodes);
  for (int it = 0; it < opt.block_iter_max; ++it) {
    // u(theta) = G(theta) xi(theta) - rhs(theta), then xi_new(theta) = u(theta - omega)
    std::vector<Eigen::VectorXd> u(nodes);
    for (int t = 0; t < nodes; ++t) u[t] = g[t] * xi[t] - rhs[t];
    double inc = 0.0;
    for (int q = 0; q < d; ++q) {
      for (int t = 0; t < nodes; ++t) fn[t] = u[t][q];
      Eigen::VectorXd sh = grid.D == 0 ? fn : grid.shifted_grid(fn, ph_bwd);
      for (int t = 0; t < nodes; ++t) {
        inc = std::max(inc, std::abs(sh[t] - xi[t][q]));
        xi[t][q] = sh[t];
      }
    }
    if (inc < opt.block_tol) break;
  }
  return xi;
}

// Unstable block: xi(theta) = G(theta)^{-1} [xi(theta+omega) + rhs(theta)].
inline std::vector<Eigen::VectorXd> solve_block_unstable(const AngleGrid& grid,
                                                         const std::vector<double>& omega,
                                                         const std::vector<Eigen::MatrixXd>& g,
                                                         const std::vector<Eigen::VectorXd>& rhs,
                                                         const TorusSolveOptions& opt) {
  const int nodes = grid.total();
  const int d = static_cast<int>(g[0].rows());
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> lu(nodes);
  for (int t = 0; t < nodes; ++t) lu[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(g[t]);
  Eigen::VectorXcd ph_fwd = grid.shift_phases(omega);
  std::vector<Eigen::VectorXd> xi(nodes, Eigen::VectorXd::Zero(d));
  Eigen::VectorXd fn(nodes);
  for (int it = 0; it < opt.block_iter_max; ++it) {
    // xi_sh(theta) = xi(theta + omega)
    std::vector<Eigen::VectorXd> xish(nodes, Eigen::VectorXd::Zero(d));
    for (int q = 0; q < d; ++q) {
      for (int t = 0; t < nodes; ++t) fn[t] = xi[t][q];
      Eigen::VectorXd sh = grid.D == 0 ? fn : grid.shifted_grid(fn, ph_fwd);
      for (int t = 0; t < nodes; ++t) xish[t][q] = sh[t];
    }
    double inc = 0.0;
    for (int t = 0; t < nodes; ++t) {
      Eigen::VectorXd nx = lu[t].solve(xish[t] + rhs[t]);
      inc = std::max(inc, (nx - xi[t]).cwiseAbs().maxCoeff());
      xi[t] = nx;
    }
    if (inc < opt.block_tol) break;
  }
  return xi;
}

// Center block: G(theta) xi(theta) - xi(theta+omega) = rhs(theta), solved by
// a Fourier-diagonal preconditioner built from the theta-mean M0 of G (exact
// when G is constant) with Richardson refinement for the theta-dependent
// remainder.  The m = 0 mode is solved in the least-squares sense: neutral
// torus-tangent directions are projected out and the obstruction reported.
struct CenterSolveOut {
  std::vector<Eigen::VectorXd> xi;
  double min_divisor = std::numeric_limits<double>::infinity();
  double obstruction = 0.0;
  std::vector<std::pair<std::vector<int>, double>> divisors;
};

inline CenterSolveOut solve_block_center(const AngleGrid& grid, const std::vector<double>& omega,
                                         const std::vector<Eigen::MatrixXd>& g,
                                         const std::vector<Eigen::VectorXd>& rhs,
                                         const TorusSolveOptions& opt) {
  CenterSolveOut out;
  const int nodes = grid.total();
  const int d = static_cast<int>(g[0].rows());
  Eigen::MatrixXd m0 = Eigen::MatrixXd::Zero(d, d);
  for (int t = 0; t < nodes; ++t) m0 += g[t];
  m0 /= nodes;

  // per-mode factorizations of (M0 - e^{2 pi i m.omega} I)
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXcd>> lus(nodes);
  std::vector<bool> singular(nodes, false);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod0;
  for (int m = 0; m < nodes; ++m) {
    std::vector<int> mv = grid.mode_vec(m);
    double arg = 0.0;
    bool zero = true;
    for (int k = 0; k < grid.D; ++k) {
      arg += mv[k] * omega[k];
      if (mv[k] != 0) zero = false;
    }
    Eigen::MatrixXcd dm = m0.cast<std::complex<double>>() -
                          std::polar(1.0, 2.0 * M_PI * arg) * Eigen::MatrixXcd::Identity(d, d);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(dm);
    double smin = svd.singularValues().minCoeff();
    if (!zero) {
      out.divisors.emplace_back(mv, smin);
      out.min_divisor = std::min(out.min_divisor, smin);
      if (smin < opt.divisor_floor) throw SmallDivisor("center divisor below floor");
      lus[m] = Eigen::PartialPivLU<Eigen::MatrixXcd>(dm);
    } else if (smin < 1e-10) {
      singular[m] = true;
      cod0.compute(dm);
    } else {
      lus[m] = Eigen::PartialPivLU<Eigen::MatrixXcd>(dm);
    }
  }

  auto mode_solve = [&](const std::vector<Eigen::VectorXd>& f) {
    // solve M0 xi(theta) - xi(theta+omega) = f(theta)
    Eigen::MatrixXcd modes(d, nodes);
    Eigen::VectorXd fn(nodes);
    for (int q = 0; q < d; ++q) {
      for (int t = 0; t < nodes; ++t) fn[t] = f[t][q];
      Eigen::VectorXcd m = grid.D == 0 ? Eigen::VectorXcd(fn.cast<std::complex<double>>())
                                       : grid.to_modes(fn);
      modes.row(q) = m.transpose();
    }
    Eigen::MatrixXcd sol(d, nodes);
    for (int m = 0; m < nodes; ++m) {
      if (singular[m]) {
        Eigen::VectorXcd s = cod0.solve(modes.col(m));
        sol.col(m) = s;
      } else {
        sol.col(m) = lus[m].solve(modes.col(m));
      }
    }
    std::vector<Eigen::VectorXd> xi(nodes, Eigen::VectorXd::Zero(d));
    for (int q = 0; q < d; ++q) {
      Eigen::VectorXcd row = sol.row(q).transpose();
      Eigen::VectorXd gridvals = grid.D == 0 ? Eigen::VectorXd(row.real()) : grid.to_grid(row);
      for (int t = 0; t < nodes; ++t) xi[t][q] = gridvals[t];
    }
    return xi;
  };

  Eigen::VectorXcd ph_fwd = grid.shift_phases(omega);
  out.xi = mode_solve(rhs);
  Eigen::VectorXd fn(nodes);
  double scale = 0.0;
  for (int t = 0; t < nodes; ++t) scale = std::max(scale, rhs[t].cwiseAbs().maxCoeff());
  double prev_rn = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.block_iter_max; ++it) {
    // residual r = G xi - xi(.+omega) - rhs
    std::vector<Eigen::VectorXd> xish(nodes, Eigen::VectorXd::Zero(d));
    for (int q = 0; q < d; ++q) {
      for (int t = 0; t < nodes; ++t) fn[t] = out.xi[t][q];
      Eigen::VectorXd sh = grid.D == 0 ? fn : grid.shifted_grid(fn, ph_fwd);
      for (int t = 0; t < nodes; ++t) xish[t][q] = sh[t];
    }
    std::vector<Eigen::VectorXd> r(nodes);
    double rn = 0.0;
    for (int t = 0; t < nodes; ++t) {
      r[t] = g[t] * out.xi[t] - xish[t] - rhs[t];
      rn = std::max(rn, r[t].cwiseAbs().maxCoeff());
    }
    out.obstruction = rn;
    if (rn < std::max(opt.block_tol, 1e-16 * scale)) break;
    if (rn > 0.5 * prev_rn && it > 1) break;  // stalled at an obstruction
    prev_rn = rn;
    std::vector<Eigen::VectorXd> corr = mode_solve(r);
    for (int t = 0; t < nodes; ++t) out.xi[t] -= corr[t];
  }
  return out;
}

}  // namespace detail

/// Newton continuation of the invariant torus F(K(theta)) = K(theta+omega).
/// Corrections are decomposed in the current splitting frames: hyperbolic
/// blocks by their convergent one-sided iterations, the center block through
/// the Fourier-diagonal solve.
inline TorusSolveResult solve_invariant_torus(const MapModel& model,
                                              const std::vector<double>& omega, TorusEmbedding K0,
                                              const TorusSolveOptions& opt = {}) {
  TorusSolveResult res;
  res.K = std::move(K0);
  if (res.K.omega != omega) throw ConfigError("torus frequency mismatch with initial embedding");
  const AngleGrid& grid = res.K.grid;
  const int nodes = grid.total();
  const int n = model.geometry().state_dim();

  for (int iter = 0; iter <= opt.max_iter; ++iter) {
    // residual E(theta) = F(K(theta)) - K(theta+omega)
    std::vector<State> ksh = res.K.states_shifted(omega);
    Eigen::MatrixXd E(n, nodes);
    for (int t = 0; t < nodes; ++t) {
      State fx = model.eval(res.K.state_at_node(t));
      for (int k = 0; k < n; ++k) E(k, t) = fx[k] - ksh[t][k];
    }
    res.residual = E.cwiseAbs().maxCoeff();
    res.residual_history.push_back(res.residual);
    WL_DEBUG("torus newton iter %d residual %.3e", iter, res.residual);
    if (res.residual < opt.tol) {
      res.split = compute_splitting(model, res.K, opt.split);
      return res;
    }
    if (iter == opt.max_iter) break;

    res.split = compute_splitting(model, res.K, opt.split);
    Splitting& sp = res.split;

    // coordinates of E in the shifted frames
    std::vector<Eigen::VectorXd> eta_s(nodes), eta_c(nodes), eta_u(nodes);
    for (int t = 0; t < nodes; ++t) {
      Eigen::VectorXd coords = sp.coords(t, E.col(t), true);
      eta_s[t] = coords.segment(0, sp.ds);
      eta_c[t] = coords.segment(sp.ds, sp.dc);
      eta_u[t] = coords.segment(sp.ds + sp.dc, sp.du);
      for (auto* v : {&eta_s[t], &eta_c[t], &eta_u[t]}) *v = -*v;  // solve G xi - xi.T = -E
    }

    std::vector<Eigen::VectorXd> xi_s, xi_c, xi_u;
    if (sp.ds > 0) xi_s = detail::solve_block_stable(grid, omega, sp.Gs, eta_s, opt);
    if (sp.du > 0) xi_u = detail::solve_block_unstable(grid, omega, sp.Gu, eta_u, opt);
    if (sp.dc > 0) {
      detail::CenterSolveOut cs = detail::solve_block_center(grid, omega, sp.Gc, eta_c, opt);
      xi_c = cs.xi;
      res.last_center_modes.min_divisor = cs.min_divisor;
      res.last_center_modes.divisors = cs.divisors;
    }

    for (int t = 0; t < nodes; ++t) {
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
      if (sp.ds > 0) delta += sp.Vs[t] * xi_s[t];
      if (sp.dc > 0) delta += sp.Vc[t] * xi_c[t];
      if (sp.du > 0) delta += sp.Vu[t] * xi_u[t];
      res.K.vals.col(t) += delta;
    }
  }
  throw NoConvergence("torus Newton did not reach tolerance", res.residual_history);
}

}  // namespace wl
