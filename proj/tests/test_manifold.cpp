#include <catch2/catch_amalgamated.hpp>

#include "wl/flow_manifold.hpp"
#include "wl/manifold.hpp"

using namespace wl;

namespace {

// One-site saddle in the plane: x' = lam x + a2 x^2 + a3 x^3, y' = mu y + b2 x^2.
// Small enough that every conjugacy coefficient has a hand recurrence.
struct Saddle2D : MapModel {
  LatticeGeometry geo;
  ExcitedSites exc;
  double lam, mu, a2, a3, b2;

  Saddle2D(double l, double m, double q2, double q3, double c2)
      : lam(l), mu(m), a2(q2), a3(q3), b2(c2) {
    geo.dim_n = 1;
    geo.box_radius = 0;
    geo.torus_dirs = 0;
    geo.real_dirs = 2;
    exc.sites = {0};
  }

  const LatticeGeometry& geometry() const override { return geo; }
  const ExcitedSites& excited() const override { return exc; }
  std::vector<double> angle_frequencies() const override { return {}; }

  State eval(const State& x) const override {
    return {lam * x[0] + a2 * x[0] * x[0] + a3 * x[0] * x[0] * x[0], mu * x[1] + b2 * x[0] * x[0]};
  }

  DecayOperator differential(const State& x) const override {
    DecayOperator d(geo);
    Eigen::MatrixXd& b = d.block(0, 0);
    b(0, 0) = lam + 2.0 * a2 * x[0] + 3.0 * a3 * x[0] * x[0];
    b(1, 0) = 2.0 * b2 * x[0];
    b(1, 1) = mu;
    return d;
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    auto spec = delta[0].spec;
    Jet x = delta[0];
    x.c[0] += base[0];
    Jet y = delta[1];
    y.c[0] += base[1];
    std::vector<Jet> out(2, Jet(spec));
    out[0] = x * lam + x * x * a2 + x * x * x * a3;
    out[1] = y * mu + x * x * b2;
    return out;
  }

  RefBases reference_bases() const override {
    RefBases rb;
    rb.s = Eigen::MatrixXd::Zero(2, 1);
    rb.s(0, 0) = 1.0;
    rb.u = Eigen::MatrixXd::Zero(2, 1);
    rb.u(1, 0) = 1.0;
    rb.c = Eigen::MatrixXd::Zero(2, 0);
    return rb;
  }
};

struct ToyContext {
  std::shared_ptr<Saddle2D> model;
  TorusSolveResult torus;
};

ToyContext make_toy(double lam, double mu, double a2, double a3, double b2) {
  ToyContext ctx;
  ctx.model = std::make_shared<Saddle2D>(lam, mu, a2, a3, b2);
  TorusEmbedding k0 = reference_torus(*ctx.model, 0);
  ctx.torus = solve_invariant_torus(*ctx.model, {}, k0, {});
  return ctx;
}

LatticeGeometry rotor_geo(int R) {
  LatticeGeometry g;
  g.dim_n = 1;
  g.box_radius = R;
  g.boundary = Boundary::frozen;
  g.torus_dirs = 1;
  g.real_dirs = 2;
  return g;
}

std::shared_ptr<RotorSaddleMap> make_rotor(int R, double eps, double g = 0.0, double h = 0.0) {
  LatticeGeometry geo = rotor_geo(R);
  ExcitedSites exc{{geo.flat({0, 0, 0, 0})}};
  RotorSaddleParams p;
  p.lambda = 0.5;
  p.g = g;
  p.h = h;
  p.omega = {(std::sqrt(5.0) - 1.0) / 2.0};
  p.epsilon = eps;
  p.coupling.cv = 1.0;
  p.coupling.alpha = 1.0;
  p.coupling.p = 2.0;
  p.coupling.range = 2 * R;
  return std::make_shared<RotorSaddleMap>(geo, exc, p);
}

}  // namespace

TEST_CASE("linear saddle: every higher order vanishes in both tail modes") {
  ToyContext ctx = make_toy(0.5, 2.0, 0.0, 0.0, 0.0);
  ManifoldOptions opt;
  opt.L = 3;
  opt.Lmax = 6;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);

  ManifoldPair taylor = solver.solve(TailMode::taylor_extend);
  ManifoldPair contr = solver.solve(TailMode::contraction);
  REQUIRE(contr.tail.sweeps <= 2);  // W^> = 0 reached immediately
  for (int slot = taylor.W.spec->order_begin[2]; slot < taylor.W.spec->count(); ++slot) {
    REQUIRE(taylor.W.coef[slot].cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE(contr.W.coef[slot].cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE(taylor.P.coef[slot].cwiseAbs().maxCoeff() < 1e-14);
  }
  // r_2 vanishes identically for the linear model
  ManifoldPair fresh = solver.initial_pair();
  auto r2 = solver.rhs_order(fresh, 2);
  for (const auto& m : r2) REQUIRE(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadratic saddle reproduces the coefficient recurrence") {
  const double lam = 0.5, mu = 2.0, g = 0.7, h = 0.3;
  ToyContext ctx = make_toy(lam, mu, g, 0.0, h);
  ManifoldOptions opt;
  opt.L = 4;
  opt.Lmax = 8;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);

  auto spec = pair.W.spec;
  auto slot_of = [&](int k) { return spec->order_begin[k]; };

  // P(s) = lam s + g s^2 exactly (stable row of W frozen at the identity)
  REQUIRE(pair.P.coef[slot_of(1)](0, 0) == Catch::Approx(lam).margin(1e-13));
  REQUIRE(pair.P.coef[slot_of(2)](0, 0) == Catch::Approx(g).margin(1e-12));
  REQUIRE(pair.P.coef[slot_of(3)](0, 0) == Catch::Approx(0.0).margin(1e-12));

  // independent recurrence for the transversal component:
  //   mu w2 + h = w2 lam^2          (order 2)
  //   mu w3 = w3 lam^3 + 2 lam g w2 (order 3)
  double w2 = h / (lam * lam - mu);
  double w3 = 2.0 * lam * g * w2 / (mu - lam * lam * lam);
  REQUIRE(pair.W.coef[slot_of(2)](1, 0) == Catch::Approx(w2).margin(1e-12));
  REQUIRE(pair.W.coef[slot_of(3)](1, 0) == Catch::Approx(w3).margin(1e-12));
  // stable rows of the higher orders are pinned to zero (normalization)
  REQUIRE(pair.W.coef[slot_of(2)](0, 0) == 0.0);
  REQUIRE(pair.W.coef[slot_of(3)](0, 0) == 0.0);

  // pointwise invariance |F(W(s)) - W(P(s))| = O(s^{Lmax+1})
  for (double s : {1e-2, 5e-2}) {
    Eigen::VectorXd sv(1);
    sv[0] = s;
    State x = pair.W.eval_node(0, sv);
    State fx = ctx.model->eval(x);
    Eigen::VectorXd ps = pair.P.eval_node(0, sv);
    State wps = pair.W.eval_node(0, ps);
    for (int c = 0; c < 2; ++c)
      REQUIRE(fx[c] == Catch::Approx(wps[c]).margin(1e-12 + std::pow(s, 9.0) * 1e3));
  }
}

TEST_CASE("cubic saddle order-3 data matches the hand expansion") {
  ToyContext ctx = make_toy(0.5, 2.0, 0.0, 1.0, 0.0);
  ManifoldOptions opt;
  opt.L = 3;
  opt.Lmax = 6;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair pair = solver.initial_pair();
  solver.solve_projected_order(pair, 2, false);
  // r_3 of x' = lam x + x^3: the cubic coefficient itself
  auto r3 = solver.rhs_order(pair, 3);
  REQUIRE(r3[0](0, 0) == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(r3[0](1, 0) == Catch::Approx(0.0).margin(1e-14));
  solver.solve_projected_order(pair, 3, false);
  REQUIRE(pair.P.coef[pair.W.spec->order_begin[3]](0, 0) == Catch::Approx(1.0).margin(1e-13));
}

TEST_CASE("S^{-1} reproduces the scalar geometric series 4/7") {
  // A acts as 2 on the transversal row, Q(s) = 0.5 s, eta = s^2, L = 1:
  // H = sum_j 2^{-(j+1)} (0.5)^{2j} s^2 = (4/7) s^2
  ToyContext ctx = make_toy(0.5, 2.0, 0.0, 0.0, 0.0);
  ManifoldOptions opt;
  opt.L = 1;
  opt.Lmax = 2;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair pair = solver.initial_pair();

  auto spec = pair.W.spec;
  std::vector<Eigen::MatrixXd> eta(spec->count(), Eigen::MatrixXd::Zero(2, 1));
  int s2 = spec->order_begin[2];
  eta[s2](1, 0) = 1.0;

  double defect = 0.0;
  auto h = solver.apply_S_inverse(pair, eta, &defect);
  REQUIRE(h[s2](1, 0) == Catch::Approx(4.0 / 7.0).margin(1e-12));
  REQUIRE(h[s2](0, 0) == Catch::Approx(0.0).margin(1e-13));  // x-row has zero input
  REQUIRE(defect < 1e-12);

  // independent geometric-series oracle for the transversal row
  double acc = 0.0;
  for (int j = 0; j < 60; ++j) acc += std::pow(2.0, -(j + 1)) * std::pow(0.25, j);
  REQUIRE(acc == Catch::Approx(4.0 / 7.0).margin(1e-14));

  // eta = 0 -> H = 0
  std::vector<Eigen::MatrixXd> zero(spec->count(), Eigen::MatrixXd::Zero(2, 1));
  auto h0 = solver.apply_S_inverse(pair, zero);
  for (const auto& m : h0) REQUIRE(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("both tail modes agree on the cubic saddle") {
  ToyContext ctx = make_toy(0.5, 2.0, 0.4, 0.8, 0.6);
  ManifoldOptions opt;
  opt.L = 3;
  opt.Lmax = 7;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair a = solver.solve(TailMode::taylor_extend);
  ManifoldPair b = solver.solve(TailMode::contraction);
  REQUIRE(b.tail.contraction_factor < 1.0);
  for (int slot = a.W.spec->order_begin[opt.L + 1]; slot < a.W.spec->count(); ++slot) {
    double scale = std::max(1.0, a.W.coef[slot].cwiseAbs().maxCoeff());
    REQUIRE((a.W.coef[slot] - b.W.coef[slot]).cwiseAbs().maxCoeff() / scale < 1e-9);
  }
}

TEST_CASE("rescale is the identity at delta 1 and scales coefficients exactly") {
  ToyContext ctx = make_toy(0.5, 2.0, 0.7, 0.0, 0.3);
  ManifoldOptions opt;
  opt.L = 3;
  opt.Lmax = 6;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);

  ManifoldPair same = pair;
  rescale(same, 1.0);
  for (int slot = 1; slot < pair.W.spec->count(); ++slot)
    REQUIRE((same.W.coef[slot] - pair.W.coef[slot]).cwiseAbs().maxCoeff() == 0.0);

  ManifoldPair half = pair;
  rescale(half, 0.5);
  int s3 = pair.W.spec->order_begin[3];
  REQUIRE(half.W.coef[s3](1, 0) == Catch::Approx(0.25 * pair.W.coef[s3](1, 0)));

  // quadratic nonlinearity: ||D^2_s N|| scales exactly linearly in delta
  auto n1 = scaled_nonlinearity_norms(*ctx.model, ctx.torus.K, ctx.torus.split, 0.5, 4);
  auto n2 = scaled_nonlinearity_norms(*ctx.model, ctx.torus.K, ctx.torus.split, 0.25, 4);
  REQUIRE(n1[2] == Catch::Approx(2.0 * n2[2]).margin(1e-13));
  REQUIRE(n1[0] == Catch::Approx(0.0).margin(1e-14));
  REQUIRE(n1[1] == Catch::Approx(0.0).margin(1e-14));

  // linear model: N vanishes identically for every delta
  ToyContext lin = make_toy(0.5, 2.0, 0.0, 0.0, 0.0);
  auto nl = scaled_nonlinearity_norms(*lin.model, lin.torus.K, lin.torus.split, 0.5, 4);
  for (double v : nl) REQUIRE(v == 0.0);
}

TEST_CASE("measured contraction factor decreases as delta is halved") {
  ToyContext ctx = make_toy(0.5, 2.0, 0.7, 0.5, 0.6);
  ManifoldOptions opt;
  opt.L = 2;
  opt.Lmax = 6;
  ManifoldSolver solver(*ctx.model, ctx.torus.K, ctx.torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);
  double f1 = solver.measure_contraction(pair, 1.0);
  double f2 = solver.measure_contraction(pair, 0.5);
  double f3 = solver.measure_contraction(pair, 0.25);
  REQUIRE(f2 < f1);
  REQUIRE(f3 < f2);
}

TEST_CASE("root map of F^2 satisfies the composition identity and F-invariance") {
  auto f = std::make_shared<Saddle2D>(0.5, 2.0, 0.6, 0.0, 0.8);
  auto f2 = std::make_shared<PowerMap>(f, 2);
  TorusEmbedding k0 = reference_torus(*f2, 0);
  auto torus = solve_invariant_torus(*f2, {}, k0, {});

  ManifoldOptions opt;
  opt.L = 4;
  opt.Lmax = 8;
  ManifoldSolver solver(*f2, torus.K, torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);

  // D_s P of the F^2 pair is lambda^2; the derived root map has D_s R = lambda
  REQUIRE(pair.P.coef[pair.P.spec->order_begin[1]](0, 0) == Catch::Approx(0.25).margin(1e-12));
  RootMapResult rm = derive_root_map(pair, torus.split, *f, {}, 2);
  REQUIRE(rm.R.coef[rm.R.spec->order_begin[1]](0, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(rm.cu_defect < 1e-9);
  REQUIRE(rm.compose_defect < 1e-9);

  // direct F-invariance of the fibers through the derived R
  for (double s : {5e-3, 2e-2}) {
    Eigen::VectorXd sv(1);
    sv[0] = s;
    State x = pair.W.eval_node(0, sv);
    State fx = f->eval(x);
    Eigen::VectorXd rs = rm.R.eval_node(0, sv);
    State wrs = pair.W.eval_node(0, rs);
    for (int c = 0; c < 2; ++c) REQUIRE(std::abs(fx[c] - wrs[c]) < 1e-8);
  }
}

TEST_CASE("perturbed rotor-saddle manifold: defects, fiber rate, localization") {
  auto model = make_rotor(3, 0.005, 0.8, 1.0);
  TorusEmbedding k0 = reference_torus(*model, 16);
  TorusSolveOptions topt;
  auto torus = solve_invariant_torus(*model, model->angle_frequencies(), k0, topt);

  ManifoldOptions opt;
  opt.L = 4;
  opt.Lmax = 8;
  ManifoldSolver solver(*model, torus.K, torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);

  // per-order defects certified during the solve
  for (double d : pair.order_defects) REQUIRE(d < 1e-10);

  // invariance residual on fresh (theta, s) samples
  const AngleGrid& grid = torus.K.grid;
  Eigen::VectorXcd ph = grid.shift_phases(torus.K.omega);
  std::vector<Eigen::MatrixXd> wsh = pair.W.shifted_coef(ph);
  std::vector<State> base_sh = torus.K.states_shifted(torus.K.omega);
  double worst = 0.0;
  for (int t = 0; t < grid.total(); t += 3) {
    for (double s : {-0.01, 0.004, 0.01}) {
      Eigen::VectorXd sv(1);
      sv[0] = s;
      State fx = model->eval(pair.W.eval_node(t, sv));
      Eigen::VectorXd ps = pair.P.eval_node(t, sv);
      Eigen::VectorXd mono = pair.W.monomials(ps);
      for (int c = 0; c < model->geometry().state_dim(); ++c) {
        double w = base_sh[t][c];
        for (int slot = 1; slot < pair.W.spec->count(); ++slot) w += wsh[slot](c, t) * mono[slot];
        worst = std::max(worst, std::abs(fx[c] - w));
      }
    }
  }
  REQUIRE(worst < 1e-10);

  // fiber contraction rate from iterated orbits
  Eigen::VectorXd sv(1);
  sv[0] = 0.01;
  State x = pair.W.eval_node(0, sv);
  std::vector<double> dist;
  State cur = x;
  for (int n = 1; n <= 20; ++n) {
    cur = model->eval(cur);
    std::vector<double> th = {torus.K.omega[0] * n};
    State kn = torus.K.eval(th);
    double d = 0.0;
    for (size_t q = 0; q < cur.size(); ++q) d = std::max(d, std::abs(cur[q] - kn[q]));
    dist.push_back(d);
  }
  double mu_fit = std::pow(dist[19] / dist[13], 1.0 / 6.0);
  RateEstimate rates = estimate_rates(torus.split, 12);
  REQUIRE(std::abs(mu_fit - rates.mu1) < 0.05);

  // localization: coefficient envelope decays like Gamma away from the site
  auto gamma = make_decay_function(1.0, 2.0, model->geometry());
  std::vector<double> per_site;
  double cloc = pair.W.localized_profile(gamma, model->excited(), 2, &per_site);
  REQUIRE(std::isfinite(cloc));
  int c0 = model->excited().sites[0];
  int edge = model->geometry().flat({3, 0, 0, 0});
  REQUIRE(per_site[edge] < per_site[c0]);
}

TEST_CASE("uncoupled rotor-saddle manifold is exact at every order") {
  auto model = make_rotor(2, 0.0);
  TorusEmbedding k0 = reference_torus(*model, 8);
  auto torus = solve_invariant_torus(*model, model->angle_frequencies(), k0, {});
  ManifoldOptions opt;
  opt.L = 3;
  opt.Lmax = 6;
  ManifoldSolver solver(*model, torus.K, torus.split, opt);
  ManifoldPair pair = solver.solve(TailMode::taylor_extend);
  // linear saddle: r_i = 0, so W_i = 0 and P_i = 0 beyond order 1
  for (int slot = pair.W.spec->order_begin[2]; slot < pair.W.spec->count(); ++slot) {
    REQUIRE(pair.W.coef[slot].cwiseAbs().maxCoeff() < 1e-13);
    REQUIRE(pair.P.coef[slot].cwiseAbs().maxCoeff() < 1e-13);
  }
  // P_1 is the constant lambda
  for (int t = 0; t < torus.K.grid.total(); t += 5)
    REQUIRE(pair.P.coef[pair.P.spec->order_begin[1]](0, t) == Catch::Approx(0.5).margin(1e-13));
}

TEST_CASE("klein-gordon flow manifold: identity defect and S_t invariance") {
  LatticeGeometry geo;
  geo.dim_n = 1;
  geo.box_radius = 2;
  geo.boundary = Boundary::frozen;
  geo.torus_dirs = 0;
  geo.real_dirs = 2;
  ExcitedSites exc{{geo.flat({0, 0, 0, 0})}};
  KleinGordonParams kp;
  kp.nu0 = 1.2;
  kp.nu = 0.5;
  kp.beta = 1.0;
  kp.epsilon = 0.01;
  kp.coupling.cv = 1.0;
  kp.coupling.alpha = 1.0;
  kp.coupling.p = 2.0;
  kp.coupling.range = 4;
  auto field = std::make_shared<KleinGordonField>(geo, exc, kp);

  FlowManifoldOptions fopt;
  fopt.t0 = 1.0;
  fopt.h = 2e-3;
  fopt.t_check = {0.3, 1.7};
  fopt.manifold.L = 3;
  fopt.manifold.Lmax = 6;
  FlowManifoldResult res = solve_flow_manifold(field, fopt);

  REQUIRE(res.field_identity_defect < 1e-12);  // pinned equilibrium is exact
  REQUIRE(res.torus.residual < 1e-12);
  for (const auto& slice : res.slices) {
    REQUIRE(slice.cu_defect < 1e-8);
    REQUIRE(slice.invariance_defect < 1e-7);
  }
  // the t0-slice dynamics contracts at e^{-nu0 t0}
  double p1 = res.pair.P.coef[res.pair.P.spec->order_begin[1]](0, 0);
  REQUIRE(p1 == Catch::Approx(std::exp(-1.2)).epsilon(0.05));
}
