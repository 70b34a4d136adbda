#pragma once

#include <functional>
#include <random>

#include "wl/serialize.hpp"

namespace wl {

struct VerifyOptions {
  double tol_total = 1e-8;
  double slope_tol = 0.2;
  double slope_lo = 1e-4;
  double slope_hi = 1e-2;
  int slope_samples = 25;
  double residual_floor = 1e-13;  // samples below this sit in roundoff and are excluded from fits
  int n_orbit = 20;
  double orbit_s = 0.01;
  double rate_tol = 0.05;
  double tol_graph = 1e-8;
  double tail_restart_tol = 1e-9;
  double tol_image = 1e-8;
  int image_samples = 1000;
  double edge_guard = 1.0;  // boundary ratio may not exceed the interior maximum
  std::uint64_t seed = 20240817ull;
};

/// Pass/fail record with every measured quantity and threshold retained so
/// the verdict can be recomputed from the stored numbers alone.
struct Certificate {
  std::string name;
  std::uint64_t inputs_digest = 0;
  std::vector<std::pair<std::string, double>> measured;
  std::vector<std::pair<std::string, double>> thresholds;
  bool pass = false;
  std::vector<std::string> artifacts;

  void add(const std::string& key, double value) { measured.emplace_back(key, value); }
  void bound(const std::string& key, double value) { thresholds.emplace_back(key, value); }
};

inline ordered_json certificate_to_json(const Certificate& c) {
  ordered_json j;
  j["name"] = c.name;
  j["inputs_digest"] = c.inputs_digest;
  ordered_json m, t;
  for (const auto& [k, v] : c.measured) m[k] = hexfloat(v);
  for (const auto& [k, v] : c.thresholds) t[k] = hexfloat(v);
  j["measured"] = std::move(m);
  j["thresholds"] = std::move(t);
  j["verdict"] = c.pass ? "pass" : "fail";
  ordered_json a = ordered_json::array();
  for (const auto& p : c.artifacts) a.push_back(p);
  j["artifacts"] = std::move(a);
  return j;
}

/// Cached evaluation of W(theta_t + shift, .) for residual checks.
struct PairEvaluator {
  const ManifoldPair& pair;
  std::vector<Eigen::MatrixXd> wsh;
  std::vector<State> base_sh;

  PairEvaluator(const ManifoldPair& p, const std::vector<double>& shift)
      : pair(p),
        wsh(p.W.shifted_coef(p.W.grid.shift_phases(shift))),
        base_sh(p.W.base.states_shifted(shift)) {}

  State eval(int node, const Eigen::VectorXd& s, int max_rank) const {
    State x = base_sh[node];
    Eigen::VectorXd mono = pair.W.monomials(s);
    int hi = pair.W.spec->order_begin[std::min(max_rank, pair.W.spec->max_order) + 1];
    for (int slot = 1; slot < hi; ++slot)
      for (size_t c = 0; c < x.size(); ++c) x[c] += wsh[slot](c, node) * mono[slot];
    return x;
  }
};

/// sup_{theta grid, |s| = s_mag} |F(W(theta,s)) - W(theta+omega, P(theta,s))|
/// with the expansion truncated at max_rank on both sides.
inline double invariance_residual(const MapModel& model, const ManifoldPair& pair,
                                  const PairEvaluator& ev, double s_mag, int max_rank,
                                  int node_stride = 1) {
  const AngleGrid& grid = pair.W.grid;
  const int ds = pair.W.spec->dvars;
  double worst = 0.0;
  std::vector<Eigen::VectorXd> dirs;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(ds);
  for (int q = 0; q < ds; ++q) {
    e.setZero();
    e[q] = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  if (ds > 1) dirs.push_back(Eigen::VectorXd::Constant(ds, 1.0 / std::sqrt(double(ds))));
  for (int t = 0; t < grid.total(); t += node_stride) {
    for (const auto& dir : dirs) {
      Eigen::VectorXd s = s_mag * dir;
      State x = pair.W.eval_node(t, s);
      // truncate W on the argument side as well
      if (max_rank < pair.W.spec->max_order) {
        x = pair.W.base.state_at_node(t);
        Eigen::VectorXd mono = pair.W.monomials(s);
        for (int slot = 1; slot < pair.W.spec->order_begin[max_rank + 1]; ++slot)
          for (size_t c = 0; c < x.size(); ++c) x[c] += pair.W.coef[slot](c, t) * mono[slot];
      }
      State fx = model.eval(x);
      Eigen::VectorXd ps = Eigen::VectorXd::Zero(ds);
      Eigen::VectorXd mono = pair.W.monomials(s);
      for (int slot = 1; slot < pair.P.spec->order_begin[pair.P.degree + 1]; ++slot)
        ps += pair.P.coef[slot].col(t) * mono[slot];
      State w = ev.eval(t, ps, max_rank);
      for (size_t c = 0; c < w.size(); ++c) worst = std::max(worst, std::abs(fx[c] - w[c]));
    }
  }
  return worst;
}

/// Invariance certificate: sup residual of the full pair over the sampled
/// ball, with the per-sample table exported when a CSV path is given.
inline Certificate check_invariance(const MapModel& model, const ManifoldPair& pair,
                                    const VerifyOptions& opt, std::uint64_t digest,
                                    const std::string& csv_path = "") {
  Certificate cert;
  cert.name = "invariance";
  cert.inputs_digest = digest;
  PairEvaluator ev(pair, pair.W.base.omega);
  double sup = 0.0;
  std::unique_ptr<CsvWriter> csv;
  if (!csv_path.empty()) {
    csv = std::make_unique<CsvWriter>(csv_path, {"s_magnitude", "residual"});
    cert.artifacts.push_back(csv_path);
  }
  for (int k = 0; k < opt.slope_samples; ++k) {
    double frac = opt.slope_samples == 1 ? 1.0 : static_cast<double>(k) / (opt.slope_samples - 1);
    double s_mag = opt.slope_lo * std::pow(opt.slope_hi / opt.slope_lo, frac);
    double r = invariance_residual(model, pair, ev, s_mag, pair.W.spec->max_order);
    if (csv) csv->row({CsvWriter::num(s_mag), CsvWriter::num(r)});
    sup = std::max(sup, r);
  }
  cert.add("sup_residual", sup);
  cert.bound("tol_total", opt.tol_total);
  cert.pass = sup < opt.tol_total;
  return cert;
}

/// Truncation-only slope: with the tail dropped, the residual must behave
/// like |s|^{L+1}.  Samples under the double-precision floor are excluded
/// from the log-log fit.
inline Certificate check_truncation_slope(const MapModel& model, const ManifoldPair& pair,
                                          const VerifyOptions& opt, std::uint64_t digest,
                                          const std::string& csv_path = "") {
  Certificate cert;
  cert.name = "truncation_slope";
  cert.inputs_digest = digest;
  PairEvaluator ev(pair, pair.W.base.omega);
  std::vector<std::pair<double, double>> pts;
  std::unique_ptr<CsvWriter> csv;
  if (!csv_path.empty()) {
    csv = std::make_unique<CsvWriter>(csv_path, {"s_magnitude", "residual"});
    cert.artifacts.push_back(csv_path);
  }
  for (int k = 0; k < opt.slope_samples; ++k) {
    double frac = static_cast<double>(k) / (opt.slope_samples - 1);
    double s_mag = opt.slope_lo * std::pow(opt.slope_hi / opt.slope_lo, frac);
    double r = invariance_residual(model, pair, ev, s_mag, pair.L, 2);
    if (csv) csv->row({CsvWriter::num(s_mag), CsvWriter::num(r)});
    if (r > opt.residual_floor) pts.emplace_back(std::log(s_mag), std::log(r));
  }
  double slope = 0.0;
  if (pts.size() >= 3) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    double n = static_cast<double>(pts.size());
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  }
  cert.add("slope", slope);
  cert.add("fit_points", static_cast<double>(pts.size()));
  cert.bound("expected_slope", pair.L + 1.0);
  cert.bound("slope_tol", opt.slope_tol);
  cert.pass = pts.size() >= 3 && std::abs(slope - (pair.L + 1.0)) <= opt.slope_tol;
  return cert;
}

/// Graph property: the stable-coordinate component of W is invertible near
/// s = 0, and the graph of H = W^{cu} o (W^s)^{-1} lies on the manifold.
inline Certificate check_graph_property(const ManifoldPair& pair, const Splitting& sp,
                                        const VerifyOptions& opt, std::uint64_t digest,
                                        int node = 0) {
  Certificate cert;
  cert.name = "graph_property";
  cert.inputs_digest = digest;
  const auto spec = pair.W.spec;
  const int n = pair.W.state_dim();
  const int ds = sp.ds;

  // frame coordinates of the displacement jets at the node
  std::vector<Jet> disp = pair.W.node_jets(node, spec->max_order);
  Eigen::MatrixXd frames(n, n);
  frames.middleCols(0, ds) = sp.Vs[node];
  frames.middleCols(ds, n - ds) = sp.Vcu[node];
  Eigen::PartialPivLU<Eigen::MatrixXd> flu(frames);
  std::vector<Jet> xi(n, Jet(spec));
  for (int slot = 1; slot < spec->count(); ++slot) {
    Eigen::VectorXd col(n);
    for (int c = 0; c < n; ++c) col[c] = disp[c].c[slot];
    Eigen::VectorXd coords = flu.solve(col);
    for (int c = 0; c < n; ++c) xi[c].c[slot] = coords[c];
  }
  std::vector<Jet> xs(xi.begin(), xi.begin() + ds);
  std::vector<Jet> inv;
  try {
    inv = invert_jet_map(xs);
  } catch (const NotInvertible&) {
    cert.add("tangency_ok", 0.0);
    cert.pass = false;
    return cert;
  }
  cert.add("tangency_ok", 1.0);

  // H = xi_cu o (xi_s)^{-1}: DH(0) = 0 by tangency
  std::vector<Jet> h(n - ds, Jet(spec));
  for (int c = 0; c < n - ds; ++c) h[c] = compose(xi[ds + c], inv);
  double dh0 = 0.0;
  for (int c = 0; c < n - ds; ++c)
    for (int slot = spec->order_begin[1]; slot < spec->order_begin[2]; ++slot)
      dh0 = std::max(dh0, std::abs(h[c].c[slot]));
  cert.add("dh_at_zero", dh0);
  cert.bound("dh_tol", 1e-9);

  // graph points land on the manifold image
  double mismatch = 0.0;
  for (double sig : {opt.slope_hi, 0.5 * opt.slope_hi}) {
    Eigen::VectorXd sigma = Eigen::VectorXd::Constant(ds, sig);
    // s* with stable coordinate sigma
    Eigen::VectorXd mono = pair.W.monomials(sigma);
    Eigen::VectorXd sstar = Eigen::VectorXd::Zero(ds);
    for (int q = 0; q < ds; ++q)
      for (int slot = 1; slot < spec->count(); ++slot) sstar[q] += inv[q].c[slot] * mono[slot];
    // graph point in phase space
    State p = pair.W.base.state_at_node(node);
    Eigen::VectorXd coords = Eigen::VectorXd::Zero(n);
    coords.segment(0, ds) = sigma;
    for (int c = 0; c < n - ds; ++c) {
      double v = 0.0;
      for (int slot = 1; slot < spec->count(); ++slot) v += h[c].c[slot] * mono[slot];
      coords[ds + c] = v;
    }
    Eigen::VectorXd ppt = frames * coords;
    for (int c = 0; c < n; ++c) p[c] += ppt[c];
    State wstar = pair.W.eval_node(node, sstar);
    for (int c = 0; c < n; ++c) mismatch = std::max(mismatch, std::abs(wstar[c] - p[c]));
  }
  cert.add("graph_image_mismatch", mismatch);
  cert.bound("tol_graph", opt.tol_graph);
  cert.pass = dh0 < 1e-9 && mismatch < opt.tol_graph;
  return cert;
}

/// Normalization and uniqueness: conditions on the low orders re-measured
/// independently, the tail re-solved from a perturbed start, and a
/// reparameterized pair compared through its manifold image.
inline Certificate check_uniqueness_normalization(const MapModel& model, const ManifoldSolver& solver,
                                                  const ManifoldPair& pair, const Splitting& sp,
                                                  const VerifyOptions& opt, std::uint64_t digest) {
  Certificate cert;
  cert.name = "uniqueness_normalization";
  cert.inputs_digest = digest;
  const auto spec = pair.W.spec;
  const int n = pair.W.state_dim();
  const int nodes = pair.W.grid.total();

  // condition 4: stable-frame coordinates of D^i_s W(theta, 0) vanish, 2<=i<=L
  double cond4 = 0.0;
  for (int t = 0; t < nodes; ++t) {
    Eigen::MatrixXd frames(n, n);
    frames.middleCols(0, sp.ds) = sp.Vs[t];
    frames.middleCols(sp.ds, n - sp.ds) = sp.Vcu[t];
    Eigen::PartialPivLU<Eigen::MatrixXd> flu(frames);
    for (int slot = spec->order_begin[2]; slot < spec->order_begin[pair.L + 1]; ++slot) {
      Eigen::VectorXd coords = flu.solve(Eigen::VectorXd(pair.W.coef[slot].col(t)));
      cond4 = std::max(cond4, coords.segment(0, sp.ds).cwiseAbs().maxCoeff());
    }
  }
  cert.add("stable_rows_sup", cond4);
  cert.bound("stable_rows_tol", 1e-12);

  // conditions 1-3: W(theta,0) = K holds structurally; DP(theta,0) = A^s
  double dp = 0.0;
  for (int t = 0; t < nodes; ++t)
    for (int q = 0; q < sp.ds; ++q) {
      std::array<std::uint8_t, kMaxJetVars> key{};
      key[q] = 1;
      int slot = spec->index_of(key);
      dp = std::max(dp, (pair.P.coef[slot].col(t) - sp.Gs[t].col(q)).cwiseAbs().maxCoeff());
    }
  cert.add("dp_matches_stable_cocycle", dp);
  cert.bound("dp_tol", 1e-12);

  // perturbed-start tail re-solve: the contraction pulls the iterate back
  ManifoldPair restart = pair;
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(-1e-4, 1e-4);
  for (int slot = spec->order_begin[pair.L + 1]; slot < spec->count(); ++slot)
    for (int c = 0; c < n; ++c)
      for (int t = 0; t < nodes; ++t) restart.W.coef[slot](c, t) += u(rng);
  solver.resolve_tail_from(restart);
  double restart_delta = 0.0;
  for (int slot = spec->order_begin[pair.L + 1]; slot < spec->count(); ++slot)
    restart_delta =
        std::max(restart_delta, (restart.W.coef[slot] - pair.W.coef[slot]).cwiseAbs().maxCoeff());
  cert.add("tail_restart_delta", restart_delta);
  cert.bound("tail_restart_tol", opt.tail_restart_tol);

  // reparameterization: Q(s) = s + 0.1 s.s changes (W, P) but not the image
  ManifoldPair repar = pair;
  {
    std::vector<Jet> qmap(spec->dvars, Jet(spec));
    for (int q = 0; q < spec->dvars; ++q) {
      qmap[q] = Jet::variable(spec, q);
      qmap[q] += qmap[q] * qmap[q] * 0.1;
    }
    for (int t = 0; t < nodes; ++t) {
      // W~ = W o Q truncated at L; P~ = (Q^{-1} o P o Q)^{<=L}
      std::vector<Jet> wj = pair.W.node_jets(t, pair.L);
      std::vector<Jet> qinv = invert_jet_map(qmap);
      std::vector<Jet> pj = pair.P.node_jets(t, pair.L);
      for (int c = 0; c < n; ++c) {
        Jet wq = compose(wj[c], qmap);
        for (int slot = 1; slot < spec->order_begin[pair.L + 1]; ++slot)
          repar.W.coef[slot](c, t) = wq.c[slot];
      }
      for (int q = 0; q < sp.ds; ++q) {
        Jet pq = compose(pj[q], qmap);
        std::vector<Jet> pq_all(sp.ds, Jet(spec));
        for (int r = 0; r < sp.ds; ++r) pq_all[r] = compose(pj[r], qmap);
        Jet out = compose(qinv[q], pq_all);
        for (int slot = 1; slot < spec->order_begin[pair.L + 1]; ++slot)
          repar.P.coef[slot](q, t) = out.c[slot];
      }
    }
    for (int slot = spec->order_begin[pair.L + 1]; slot < spec->count(); ++slot)
      repar.W.coef[slot].setZero();
  }
  solver.solve_tail_taylor(repar);

  // sampled one-sided image distances in both directions
  std::uniform_real_distribution<double> us(-opt.slope_hi, opt.slope_hi);
  double hausdorff = 0.0;
  auto nearest = [&](const ManifoldPair& target, int t, const State& p, double s_guess) {
    // local parabolic refinement of min_s |target.W(theta_t, s) - p| from s_guess
    auto dist = [&](double s) {
      Eigen::VectorXd sv = Eigen::VectorXd::Constant(spec->dvars, s);
      State w = target.W.eval_node(t, sv);
      double d = 0.0;
      for (size_t c = 0; c < w.size(); ++c) d = std::max(d, std::abs(w[c] - p[c]));
      return d;
    };
    double lo = s_guess - 2e-3, hi = s_guess + 2e-3;
    for (int it = 0; it < 60; ++it) {
      double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
      if (dist(m1) < dist(m2))
        hi = m2;
      else
        lo = m1;
    }
    return dist(0.5 * (lo + hi));
  };
  int samples = std::max(1, opt.image_samples);
  for (int k = 0; k < samples; ++k) {
    int t = static_cast<int>(rng() % static_cast<std::uint64_t>(nodes));
    double s = us(rng);
    Eigen::VectorXd sv = Eigen::VectorXd::Constant(spec->dvars, s);
    if (k % 2 == 0) {
      State p = repar.W.eval_node(t, sv);
      hausdorff = std::max(hausdorff, nearest(pair, t, p, s + 0.1 * s * s));
    } else {
      State p = pair.W.eval_node(t, sv);
      hausdorff = std::max(hausdorff, nearest(repar, t, p, s - 0.1 * s * s));
    }
  }
  cert.add("reparam_image_distance", hausdorff);
  cert.bound("tol_image", opt.tol_image);

  cert.pass = cond4 < 1e-12 && dp < 1e-12 && restart_delta < opt.tail_restart_tol &&
              hausdorff < opt.tol_image;
  (void)model;
  return cert;
}

/// Localization of the manifold coefficients against the decay envelope.
inline Certificate check_localization(const ManifoldPair& pair, const DecayFunction& gamma,
                                      const ExcitedSites& c, const VerifyOptions& opt,
                                      std::uint64_t digest, const std::string& csv_path = "") {
  Certificate cert;
  cert.name = "localization";
  cert.inputs_digest = digest;
  const auto& geo = pair.W.base.geometry;

  std::vector<double> per_site;
  pair.W.localized_profile(gamma, c, 1, &per_site);
  // include the torus' own periodic part in the envelope
  for (int i = 0; i < geo.sites(); ++i)
    per_site[i] = std::max(per_site[i], pair.W.base.site_analytic_norm(i));

  double c_loc = 0.0;
  double edge_worst = 0.0, interior_worst = 0.0;
  std::unique_ptr<CsvWriter> csv;
  if (!csv_path.empty()) {
    csv = std::make_unique<CsvWriter>(csv_path,
                                      {"site_distance", "profile_ratio", "gamma_envelope"});
    cert.artifacts.push_back(csv_path);
  }
  for (int i = 0; i < geo.sites(); ++i) {
    int dist = geo.sites() > 1 ? std::numeric_limits<int>::max() : 0;
    double env = 0.0;
    for (int ck : c.sites) {
      dist = std::min(dist, geo.distance(i, ck));
      env = std::max(env, gamma.gamma_pair(i, ck));
    }
    double ratio = per_site[i] / env;
    c_loc = std::max(c_loc, ratio);
    bool edge = dist >= geo.box_radius;
    (edge ? edge_worst : interior_worst) = std::max(edge ? edge_worst : interior_worst, ratio);
    if (csv) csv->row({CsvWriter::num(dist), CsvWriter::num(ratio), CsvWriter::num(env)});
  }
  cert.add("c_loc", c_loc);
  cert.add("edge_worst_ratio", edge_worst);
  cert.add("interior_worst_ratio", interior_worst);
  cert.bound("edge_guard", opt.edge_guard);
  cert.pass = std::isfinite(c_loc) && edge_worst <= opt.edge_guard * std::max(interior_worst, 1e-300);
  return cert;
}

/// Orbit rates: iterates launched on the fibers must approach the torus orbit
/// like C mu^n with mu within rate_tol of the certified stable rate.
inline Certificate check_rates_and_orbits(const MapModel& model, const ManifoldPair& pair,
                                          const Splitting& sp, double mu1,
                                          const VerifyOptions& opt, std::uint64_t digest,
                                          const std::string& csv_path = "") {
  Certificate cert;
  cert.name = "rates_and_orbits";
  cert.inputs_digest = digest;
  const TorusEmbedding& K = pair.W.base;
  const int ds = sp.ds;

  std::unique_ptr<CsvWriter> csv;
  if (!csv_path.empty()) {
    csv = std::make_unique<CsvWriter>(csv_path, {"n", "bundle", "sup_norm"});
    cert.artifacts.push_back(csv_path);
  }

  double mu_fit_worst = 0.0;
  double fiber_defect = 0.0;
  PairEvaluator ev(pair, K.omega);
  for (int t = 0; t < K.grid.total(); t += std::max(1, K.grid.total() / 4)) {
    Eigen::VectorXd s = Eigen::VectorXd::Constant(ds, opt.orbit_s);
    State cur = pair.W.eval_node(t, s);

    // one-step fiber invariance F(W-fiber(theta)) into fiber(theta+omega)
    {
      State fx = model.eval(cur);
      Eigen::VectorXd ps = Eigen::VectorXd::Zero(ds);
      Eigen::VectorXd mono = pair.W.monomials(s);
      for (int slot = 1; slot < pair.P.spec->order_begin[pair.P.degree + 1]; ++slot)
        ps += pair.P.coef[slot].col(t) * mono[slot];
      State w = ev.eval(t, ps, pair.W.spec->max_order);
      for (size_t cq = 0; cq < w.size(); ++cq)
        fiber_defect = std::max(fiber_defect, std::abs(fx[cq] - w[cq]));
    }

    std::vector<double> dist;
    std::vector<double> th = K.grid.node_theta(t);
    for (int n = 1; n <= opt.n_orbit; ++n) {
      cur = model.eval(cur);
      std::vector<double> thn = th;
      for (size_t q = 0; q < thn.size(); ++q) thn[q] += n * K.omega[q];
      State kn = K.eval(thn);
      double d = 0.0;
      for (size_t q = 0; q < cur.size(); ++q) d = std::max(d, std::abs(cur[q] - kn[q]));
      dist.push_back(d);
      if (csv) csv->row({CsvWriter::num(n), "stable_orbit", CsvWriter::num(d)});
    }
    int n2 = opt.n_orbit, n1 = std::max(2, (2 * opt.n_orbit) / 3);
    if (dist[n2 - 1] > 0.0 && dist[n1 - 1] > 0.0) {
      double mu_fit = std::pow(dist[n2 - 1] / dist[n1 - 1], 1.0 / (n2 - n1));
      mu_fit_worst = std::max(mu_fit_worst, std::abs(mu_fit - mu1));
      cert.add("mu_fit_node_" + std::to_string(t), mu_fit);
    }
  }
  cert.add("mu_fit_deviation", mu_fit_worst);
  cert.add("fiber_invariance_defect", fiber_defect);
  cert.bound("rate_tol", opt.rate_tol);
  cert.bound("tol_total", opt.tol_total);
  cert.pass = mu_fit_worst <= opt.rate_tol && fiber_defect < opt.tol_total;
  return cert;
}

}  // namespace wl
