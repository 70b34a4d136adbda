#pragma once

#include "wl/torus.hpp"

namespace wl {

struct SplittingOptions {
  double graph_tol = 1e-14;
  int max_iter = 5000;
  double divergence_guard = 1e8;
  double tol_split = 1e-9;  // certified defect threshold
};

/// Invariant splitting of the tangent bundle along the torus: frames,
/// projections and reduced cocycles per grid node, plus hyperbolicity rates
/// filled in by estimate_rates.
struct Splitting {
  AngleGrid grid;
  std::vector<double> omega;
  int ds = 0, dc = 0, du = 0;

  std::vector<Eigen::MatrixXd> A;      // DF(K(theta_t))
  std::vector<Eigen::MatrixXd> Vs, Vc, Vu, Vcu;
  std::vector<Eigen::MatrixXd> Vs_sh, Vc_sh, Vu_sh, Vcu_sh;  // frames at theta + omega
  std::vector<Eigen::MatrixXd> Gs, Gc, Gu, Gcu;              // reduced cocycles
  std::vector<Eigen::MatrixXd> Ps, Pc, Pu;                   // projections

  double defect_equivariance = 0.0;
  double defect_proj_idem = 0.0;
  double defect_proj_sum = 0.0;

  double mu1 = 0.0, mu2 = 0.0, mu3 = 1.0, Ch = 1.0;

  int dim() const { return ds + dc + du; }

  /// Coordinates (xi_s, xi_c, xi_u) of a vector in the frames at node t
  /// (shifted frames when sh = true).
  Eigen::VectorXd coords(int t, const Eigen::VectorXd& v, bool sh) const {
    const auto& ms = sh ? Vs_sh : Vs;
    const auto& mc = sh ? Vc_sh : Vc;
    const auto& mu_ = sh ? Vu_sh : Vu;
    Eigen::MatrixXd m(dim(), dim());
    if (ds > 0) m.middleCols(0, ds) = ms[t];
    if (dc > 0) m.middleCols(ds, dc) = mc[t];
    if (du > 0) m.middleCols(ds + dc, du) = mu_[t];
    return m.partialPivLu().solve(v);
  }
};

namespace detail {

inline void shift_matrix_family(std::vector<Eigen::MatrixXd>& m, const AngleGrid& grid,
                                const Eigen::VectorXcd& phases) {
  if (grid.D == 0 || m.empty()) return;
  const int rows = static_cast<int>(m[0].rows());
  const int cols = static_cast<int>(m[0].cols());
  Eigen::VectorXd fn(grid.total());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      for (int t = 0; t < grid.total(); ++t) fn[t] = m[t](r, c);
      Eigen::VectorXd sh = grid.shifted_grid(fn, phases);
      for (int t = 0; t < grid.total(); ++t) m[t](r, c) = sh[t];
    }
}

/// Graph-transform iteration for an invariant subbundle pinned over the rows
/// `pin` (complement rows `rest`), in the coordinates of `M` (the cocycle in
/// transformed coordinates).  forward = true iterates the bundle dominant
/// under M; forward = false the bundle dominant under M^{-1}.
inline std::vector<Eigen::MatrixXd> graph_bundle(
    const AngleGrid& grid, const Eigen::VectorXcd& phases_fwd,
    const Eigen::VectorXcd& phases_bwd, const std::vector<Eigen::MatrixXd>& M,
    const std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>>& Mlu, const std::vector<int>& pin,
    const std::vector<int>& rest, bool forward, const SplittingOptions& opt) {
  const int n = static_cast<int>(M[0].rows());
  const int k = static_cast<int>(pin.size());
  const int nodes = grid.total();
  std::vector<Eigen::MatrixXd> h(nodes, Eigen::MatrixXd::Zero(static_cast<int>(rest.size()), k));

  for (int it = 0; it < opt.max_iter; ++it) {
    // h evaluated where the update rule needs it
    std::vector<Eigen::MatrixXd> harg = h;
    if (!forward) shift_matrix_family(harg, grid, phases_fwd);  // h(theta + omega)
    std::vector<Eigen::MatrixXd> out(nodes);
    for (int t = 0; t < nodes; ++t) {
      Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, k);
      for (int q = 0; q < k; ++q) v(pin[q], q) = 1.0;
      for (size_t r = 0; r < rest.size(); ++r) v.row(rest[r]) += harg[t].row(static_cast<int>(r));
      Eigen::MatrixXd img = forward ? Eigen::MatrixXd(M[t] * v) : Eigen::MatrixXd(Mlu[t].solve(v));
      Eigen::MatrixXd c(k, k), d(static_cast<int>(rest.size()), k);
      for (int q = 0; q < k; ++q) c.row(q) = img.row(pin[q]);
      for (size_t r = 0; r < rest.size(); ++r) d.row(static_cast<int>(r)) = img.row(rest[r]);
      out[t] = c.transpose().partialPivLu().solve(d.transpose()).transpose();
    }
    if (forward) shift_matrix_family(out, grid, phases_bwd);  // value belongs at theta + omega
    double inc = 0.0, mag = 0.0;
    for (int t = 0; t < nodes; ++t) {
      inc = std::max(inc, (out[t] - h[t]).cwiseAbs().maxCoeff());
      mag = std::max(mag, out[t].cwiseAbs().maxCoeff());
    }
    h.swap(out);
    if (mag > opt.divergence_guard)
      throw SplittingDivergence("graph transform iterate exceeded the divergence guard");
    if (inc < opt.graph_tol) return h;
  }
  throw SplittingDivergence("graph transform did not converge within max_iter");
}

}  // namespace detail

/// Compute the invariant splitting along K by graph transforms bootstrapped
/// from the uncoupled block structure: the s and u bundles directly, the
/// complements c+s and c+u for the projections, and the center as the
/// residual range.
inline Splitting compute_splitting(const MapModel& model, const TorusEmbedding& K,
                                   const SplittingOptions& opt = {}) {
  Splitting sp;
  sp.grid = K.grid;
  sp.omega = K.omega;
  const int nodes = sp.grid.total();
  const int n = model.geometry().state_dim();

  RefBases rb = model.reference_bases();
  sp.ds = static_cast<int>(rb.s.cols());
  sp.dc = static_cast<int>(rb.c.cols());
  sp.du = static_cast<int>(rb.u.cols());
  if (sp.ds + sp.dc + sp.du != n) throw ConfigError("reference bases do not span the tangent space");

  Eigen::MatrixXd T(n, n);
  if (sp.ds > 0) T.middleCols(0, sp.ds) = rb.s;
  if (sp.dc > 0) T.middleCols(sp.ds, sp.dc) = rb.c;
  if (sp.du > 0) T.middleCols(sp.ds + sp.dc, sp.du) = rb.u;
  Eigen::PartialPivLU<Eigen::MatrixXd> Tlu(T);

  sp.A.resize(nodes);
  std::vector<Eigen::MatrixXd> At(nodes);  // transformed cocycle
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> Atlu(nodes);
  parallel_for(nodes, [&](int t) {
    sp.A[t] = model.differential(K.state_at_node(t)).to_dense();
    At[t] = Tlu.solve(sp.A[t] * T);
    Atlu[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(At[t]);
  });
  for (int t = 0; t < nodes; ++t)
    if (std::abs(Atlu[t].determinant()) < 1e-300)
      throw SplittingDivergence("DF(K(theta)) numerically singular on the grid");

  Eigen::VectorXcd ph_fwd = sp.grid.shift_phases(sp.omega);
  std::vector<double> neg = sp.omega;
  for (double& w : neg) w = -w;
  Eigen::VectorXcd ph_bwd = sp.grid.shift_phases(neg);

  std::vector<int> rows_s(sp.ds), rows_c(sp.dc), rows_u(sp.du);
  for (int q = 0; q < sp.ds; ++q) rows_s[q] = q;
  for (int q = 0; q < sp.dc; ++q) rows_c[q] = sp.ds + q;
  for (int q = 0; q < sp.du; ++q) rows_u[q] = sp.ds + sp.dc + q;
  auto concat = [](const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  std::vector<int> rows_sc = concat(rows_s, rows_c);
  std::vector<int> rows_cu = concat(rows_c, rows_u);

  auto embed = [&](const std::vector<Eigen::MatrixXd>& h, const std::vector<int>& pin,
                   const std::vector<int>& rest) {
    std::vector<Eigen::MatrixXd> v(nodes);
    for (int t = 0; t < nodes; ++t) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, static_cast<int>(pin.size()));
      for (size_t q = 0; q < pin.size(); ++q) m(pin[q], static_cast<int>(q)) = 1.0;
      for (size_t r = 0; r < rest.size(); ++r) m.row(rest[r]) += h[t].row(static_cast<int>(r));
      v[t] = T * m;
    }
    return v;
  };

  // stable: dominant under A^{-1}; unstable: dominant under A
  if (sp.ds > 0) {
    auto hs = detail::graph_bundle(sp.grid, ph_fwd, ph_bwd, At, Atlu, rows_s, rows_cu, false, opt);
    sp.Vs = embed(hs, rows_s, rows_cu);
  } else {
    sp.Vs.assign(nodes, Eigen::MatrixXd::Zero(n, 0));
  }
  if (sp.du > 0) {
    auto hu = detail::graph_bundle(sp.grid, ph_fwd, ph_bwd, At, Atlu, rows_u, rows_sc, true, opt);
    sp.Vu = embed(hu, rows_u, rows_sc);
  } else {
    sp.Vu.assign(nodes, Eigen::MatrixXd::Zero(n, 0));
  }

  // complements for the projections
  std::vector<Eigen::MatrixXd> Vcs, Vcu;
  {
    auto hcs = sp.du > 0 ? detail::graph_bundle(sp.grid, ph_fwd, ph_bwd, At, Atlu, rows_sc, rows_u,
                                                false, opt)
                         : std::vector<Eigen::MatrixXd>(nodes, Eigen::MatrixXd::Zero(0, n - sp.du));
    Vcs = embed(hcs, rows_sc, rows_u);
    auto hcu = sp.ds > 0 ? detail::graph_bundle(sp.grid, ph_fwd, ph_bwd, At, Atlu, rows_cu, rows_s,
                                                true, opt)
                         : std::vector<Eigen::MatrixXd>(nodes, Eigen::MatrixXd::Zero(0, n - sp.ds));
    Vcu = embed(hcu, rows_cu, rows_s);
  }

  // projections: Pi^s along E^{c+u}, Pi^u along E^{c+s}, Pi^c the residual
  sp.Ps.resize(nodes);
  sp.Pu.resize(nodes);
  sp.Pc.resize(nodes);
  sp.Vc.resize(nodes);
  for (int t = 0; t < nodes; ++t) {
    if (sp.ds > 0) {
      Eigen::MatrixXd m1(n, n);
      m1.middleCols(0, sp.ds) = sp.Vs[t];
      m1.middleCols(sp.ds, n - sp.ds) = Vcu[t];
      Eigen::MatrixXd m1i = m1.partialPivLu().inverse();
      sp.Ps[t] = sp.Vs[t] * m1i.topRows(sp.ds);
    } else {
      sp.Ps[t] = Eigen::MatrixXd::Zero(n, n);
    }
    if (sp.du > 0) {
      Eigen::MatrixXd m2(n, n);
      m2.middleCols(0, sp.du) = sp.Vu[t];
      m2.middleCols(sp.du, n - sp.du) = Vcs[t];
      Eigen::MatrixXd m2i = m2.partialPivLu().inverse();
      sp.Pu[t] = sp.Vu[t] * m2i.topRows(sp.du);
    } else {
      sp.Pu[t] = Eigen::MatrixXd::Zero(n, n);
    }
    sp.Pc[t] = Eigen::MatrixXd::Identity(n, n) - sp.Ps[t] - sp.Pu[t];
    sp.Vc[t] = sp.Pc[t] * rb.c;
  }

  // combined center+unstable frame used by the order-matching solver
  sp.Vcu.resize(nodes);
  for (int t = 0; t < nodes; ++t) {
    sp.Vcu[t].resize(n, sp.dc + sp.du);
    if (sp.dc > 0) sp.Vcu[t].middleCols(0, sp.dc) = sp.Vc[t];
    if (sp.du > 0) sp.Vcu[t].middleCols(sp.dc, sp.du) = sp.Vu[t];
  }

  // shifted frames and reduced cocycles
  sp.Vs_sh = sp.Vs;
  sp.Vc_sh = sp.Vc;
  sp.Vu_sh = sp.Vu;
  sp.Vcu_sh = sp.Vcu;
  detail::shift_matrix_family(sp.Vs_sh, sp.grid, ph_fwd);
  detail::shift_matrix_family(sp.Vc_sh, sp.grid, ph_fwd);
  detail::shift_matrix_family(sp.Vu_sh, sp.grid, ph_fwd);
  detail::shift_matrix_family(sp.Vcu_sh, sp.grid, ph_fwd);

  auto reduce = [&](const std::vector<Eigen::MatrixXd>& v, const std::vector<Eigen::MatrixXd>& vsh) {
    std::vector<Eigen::MatrixXd> g(nodes);
    for (int t = 0; t < nodes; ++t) {
      if (v[t].cols() == 0) {
        g[t] = Eigen::MatrixXd::Zero(0, 0);
        continue;
      }
      g[t] = vsh[t].colPivHouseholderQr().solve(sp.A[t] * v[t]);
    }
    return g;
  };
  sp.Gs = reduce(sp.Vs, sp.Vs_sh);
  sp.Gc = reduce(sp.Vc, sp.Vc_sh);
  sp.Gu = reduce(sp.Vu, sp.Vu_sh);
  sp.Gcu = reduce(sp.Vcu, sp.Vcu_sh);

  // certificates
  double def_eq = 0.0;
  for (int t = 0; t < nodes; ++t) {
    if (sp.ds > 0) def_eq = std::max(def_eq, (sp.A[t] * sp.Vs[t] - sp.Vs_sh[t] * sp.Gs[t]).cwiseAbs().maxCoeff());
    if (sp.dc > 0) def_eq = std::max(def_eq, (sp.A[t] * sp.Vc[t] - sp.Vc_sh[t] * sp.Gc[t]).cwiseAbs().maxCoeff());
    if (sp.du > 0) def_eq = std::max(def_eq, (sp.A[t] * sp.Vu[t] - sp.Vu_sh[t] * sp.Gu[t]).cwiseAbs().maxCoeff());
  }
  sp.defect_equivariance = def_eq;

  double idem = 0.0, sum = 0.0;
  for (int t = 0; t < nodes; ++t) {
    idem = std::max(idem, (sp.Ps[t] * sp.Ps[t] - sp.Ps[t]).cwiseAbs().maxCoeff());
    idem = std::max(idem, (sp.Pc[t] * sp.Pc[t] - sp.Pc[t]).cwiseAbs().maxCoeff());
    idem = std::max(idem, (sp.Pu[t] * sp.Pu[t] - sp.Pu[t]).cwiseAbs().maxCoeff());
    idem = std::max(idem, (sp.Ps[t] * sp.Pu[t]).cwiseAbs().maxCoeff());
    sum = std::max(sum, (sp.Ps[t] + sp.Pc[t] + sp.Pu[t] - Eigen::MatrixXd::Identity(n, n))
                            .cwiseAbs()
                            .maxCoeff());
  }
  sp.defect_proj_idem = idem;
  sp.defect_proj_sum = sum;
  return sp;
}

inline double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  return m.jacobiSvd().singularValues()(0);
}

/// Log sup norms over the grid of n-fold shifted cocycle products
/// G(theta+(n-1)w) ... G(theta+w) G(theta)  (inverted/backward variants for
/// the unstable and center bundles).  Per-node running rescaling keeps long
/// products inside double range.
inline std::vector<double> cocycle_log_sup_norms(const AngleGrid& grid,
                                                 const std::vector<double>& omega,
                                                 const std::vector<Eigen::MatrixXd>& g, int n_max,
                                                 bool invert, bool backward) {
  const int nodes = grid.total();
  if (g.empty() || g[0].rows() == 0)
    return std::vector<double>(n_max, -std::numeric_limits<double>::infinity());
  std::vector<Eigen::MatrixXd> factor(nodes);
  for (int t = 0; t < nodes; ++t)
    factor[t] = invert ? Eigen::MatrixXd(g[t].partialPivLu().inverse()) : g[t];

  std::vector<double> sup(n_max, -std::numeric_limits<double>::infinity());
  std::vector<Eigen::MatrixXd> prod = factor;
  std::vector<Eigen::MatrixXd> cur = factor;
  std::vector<double> logscale(nodes, 0.0);
  std::vector<double> step = omega;
  for (double& w : step) w = backward ? -w : w;
  Eigen::VectorXcd ph = grid.shift_phases(step);
  for (int n = 1; n <= n_max; ++n) {
    for (int t = 0; t < nodes; ++t) {
      double nn = spectral_norm(prod[t]);
      if (nn > 0.0) sup[n - 1] = std::max(sup[n - 1], logscale[t] + std::log(nn));
    }
    if (n == n_max) break;
    detail::shift_matrix_family(cur, grid, ph);
    for (int t = 0; t < nodes; ++t) {
      prod[t] = cur[t] * prod[t];
      double nn = prod[t].cwiseAbs().maxCoeff();
      if (nn > 0.0 && (nn > 1e50 || nn < 1e-50)) {
        prod[t] /= nn;
        logscale[t] += std::log(nn);
      }
    }
  }
  return sup;
}

inline std::vector<double> cocycle_sup_norms(const AngleGrid& grid,
                                             const std::vector<double>& omega,
                                             const std::vector<Eigen::MatrixXd>& g, int n_max,
                                             bool invert, bool backward) {
  std::vector<double> logs = cocycle_log_sup_norms(grid, omega, g, n_max, invert, backward);
  for (double& v : logs) v = std::isfinite(v) ? std::exp(v) : 0.0;
  return logs;
}

struct RateEstimate {
  double mu1 = 0.0, mu2 = 0.0, mu3 = 1.0, Ch = 1.0;
  std::vector<double> sup_s, sup_u_inv, sup_c_fwd, sup_c_bwd;
};

/// Fit C_h mu^n envelopes to the cocycle products on each bundle.  The rate
/// is taken from the tail ratio of the sup-norm sequence, the constant as the
/// smallest C making the envelope hold for every measured n.
inline RateEstimate estimate_rates(const Splitting& sp, int n_max,
                                   double fluctuation_tol = 0.2) {
  RateEstimate r;
  auto fit_rate = [&](const std::vector<double>& p) {
    if (p.empty() || p[0] == 0.0) return 0.0;
    int n2 = static_cast<int>(p.size());
    int n1 = std::max(1, n2 / 2);
    double mu = std::pow(p[n2 - 1] / p[n1 - 1], 1.0 / (n2 - n1));
    return mu;
  };
  auto fit_ch = [&](const std::vector<double>& p, double mu) {
    double ch = 1.0;
    for (size_t n = 1; n <= p.size(); ++n)
      if (p[n - 1] > 0.0) ch = std::max(ch, p[n - 1] / std::pow(mu, static_cast<double>(n)));
    return ch;
  };

  r.sup_s = cocycle_sup_norms(sp.grid, sp.omega, sp.Gs, n_max, false, false);
  r.sup_u_inv = cocycle_sup_norms(sp.grid, sp.omega, sp.Gu, n_max, true, true);
  r.sup_c_fwd = cocycle_sup_norms(sp.grid, sp.omega, sp.Gc, n_max, false, false);
  r.sup_c_bwd = cocycle_sup_norms(sp.grid, sp.omega, sp.Gc, n_max, true, true);

  r.mu1 = fit_rate(r.sup_s);
  r.mu2 = fit_rate(r.sup_u_inv);
  r.mu3 = std::max({1.0, fit_rate(r.sup_c_fwd), fit_rate(r.sup_c_bwd)});
  double ch = 1.0;
  if (sp.ds > 0) ch = std::max(ch, fit_ch(r.sup_s, r.mu1));
  if (sp.du > 0) ch = std::max(ch, fit_ch(r.sup_u_inv, r.mu2));
  if (sp.dc > 0) {
    ch = std::max(ch, fit_ch(r.sup_c_fwd, r.mu3));
    ch = std::max(ch, fit_ch(r.sup_c_bwd, r.mu3));
  }
  r.Ch = ch;

  if (sp.ds > 0 && r.mu1 >= 1.0)
    throw RateCertificationFailed("fitted stable rate is not a contraction");
  // products must behave like a clean geometric sequence in the fit window
  auto check_monotone = [&](const std::vector<double>& p, double mu) {
    for (size_t n = p.size() / 2; n + 1 < p.size(); ++n) {
      if (p[n] == 0.0) continue;
      double ratio = p[n + 1] / p[n];
      if (std::abs(ratio - mu) > fluctuation_tol * std::max(mu, 1e-12))
        throw RateCertificationFailed("cocycle products are non-monotone beyond fit tolerance");
    }
  };
  if (sp.ds > 0) check_monotone(r.sup_s, r.mu1);
  if (sp.du > 0) check_monotone(r.sup_u_inv, r.mu2);
  return r;
}

}  // namespace wl
