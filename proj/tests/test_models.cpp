#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "wl/models.hpp"

using namespace wl;

namespace {

LatticeGeometry rotor_geo(int R, Boundary b = Boundary::frozen) {
  LatticeGeometry g;
  g.dim_n = 1;
  g.box_radius = R;
  g.boundary = b;
  g.torus_dirs = 1;
  g.real_dirs = 2;
  return g;
}

RotorSaddleParams rotor_params(double eps, double g = 0.0, double h = 0.0) {
  RotorSaddleParams p;
  p.lambda = 0.5;
  p.g = g;
  p.h = h;
  p.omega = {(std::sqrt(5.0) - 1.0) / 2.0};
  p.epsilon = eps;
  p.coupling.cv = 1.0;
  p.coupling.alpha = 1.0;
  p.coupling.p = 2.0;
  p.coupling.range = 8;
  return p;
}

std::shared_ptr<RotorSaddleMap> make_rotor(int R, double eps, double g = 0.0, double h = 0.0) {
  LatticeGeometry geo = rotor_geo(R);
  ExcitedSites exc{{geo.flat({0, 0, 0, 0})}};
  return std::make_shared<RotorSaddleMap>(geo, exc, rotor_params(eps, g, h));
}

LatticeGeometry kg_geo(int R) {
  LatticeGeometry g;
  g.dim_n = 1;
  g.box_radius = R;
  g.boundary = Boundary::frozen;
  g.torus_dirs = 0;
  g.real_dirs = 2;
  return g;
}

std::shared_ptr<KleinGordonField> make_kg(int R, double eps) {
  LatticeGeometry geo = kg_geo(R);
  ExcitedSites exc{{geo.flat({0, 0, 0, 0})}};
  KleinGordonParams p;
  p.nu0 = 1.2;
  p.nu = 0.5;
  p.beta = 1.0;
  p.epsilon = eps;
  p.coupling.cv = 1.0;
  p.coupling.alpha = 1.0;
  p.coupling.p = 2.0;
  p.coupling.range = 2 * R;
  return std::make_shared<KleinGordonField>(geo, exc, p);
}

State random_state(const LatticeGeometry& g, std::mt19937_64& rng, double ball) {
  std::uniform_real_distribution<double> u(-ball, ball);
  State x(g.state_dim());
  for (double& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("uncoupled rotor-saddle fixes the pinned state with diagonal saddle blocks") {
  auto model = make_rotor(4, 0.0);
  State x(model->geometry().state_dim(), 0.0);
  State fx = model->eval(x);
  for (size_t k = 0; k < fx.size(); ++k)
    if (k % 3 != 0) REQUIRE(fx[k] == 0.0);

  DecayOperator d = model->differential(x);
  int c = model->excited().sites[0];
  const Eigen::MatrixXd* blk = d.find(c, c);
  REQUIRE(blk != nullptr);
  REQUIRE((*blk)(1, 1) == Catch::Approx(0.5));
  REQUIRE((*blk)(2, 2) == Catch::Approx(2.0));
}

TEST_CASE("analytic differential matches central finite differences") {
  auto model = make_rotor(3, 0.01, 0.8, 1.0);
  std::mt19937_64 rng(19);
  State x = random_state(model->geometry(), rng, 0.05);
  Eigen::MatrixXd d = model->differential(x).to_dense();

  const double step = 1e-6;
  const int n = model->geometry().state_dim();
  for (int j = 0; j < n; j += 5) {
    State xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    State fp = model->eval(xp), fm = model->eval(xm);
    for (int i = 0; i < n; ++i) {
      double fd = (fp[i] - fm[i]) / (2.0 * step);
      REQUIRE(d(i, j) == Catch::Approx(fd).margin(1e-8));
    }
  }
}

TEST_CASE("coupling decay certificate is bounded for the rotor-saddle") {
  auto model = make_rotor(4, 0.01);
  LatticeGeometry geo = model->geometry();
  auto gamma = make_decay_function(1.0, 2.0, geo);
  double cgrowth = coupling_decay_constant(*model, gamma, 100, 0.1, 42);
  REQUIRE(std::isfinite(cgrowth));
  // uncoupled part dominates: diagonal 1/lambda over Gamma(0), coupling adds O(eps)
  double c0 = 2.0 / gamma.a;
  REQUIRE(cgrowth <= c0 * (1.0 + 1.0));
  REQUIRE(cgrowth >= c0 * (1.0 - 1e-9));
}

TEST_CASE("jet expansion agrees with evaluation along a curve") {
  auto model = make_rotor(2, 0.02, 0.8, 1.0);
  const int n = model->geometry().state_dim();
  std::mt19937_64 rng(29);
  State x = random_state(model->geometry(), rng, 0.03);
  State dir = random_state(model->geometry(), rng, 1.0);

  auto spec = JetSpec::get(1, 6);
  std::vector<Jet> delta(n, Jet(spec));
  for (int k = 0; k < n; ++k) delta[k].c[1] = dir[k];
  std::vector<Jet> out = model->expand_jet(x, delta);

  for (double t : {1e-3, 5e-3}) {
    State xt = x;
    for (int k = 0; k < n; ++k) xt[k] += t * dir[k];
    State ft = model->eval(xt);
    for (int k = 0; k < n; ++k) {
      double series = 0.0, tp = 1.0;
      for (int o = 0; o <= 6; ++o) {
        series += out[k].c[o] * tp;
        tp *= t;
      }
      REQUIRE(series == Catch::Approx(ft[k]).margin(5e-14 + std::pow(t, 7.0) * 1e3));
    }
  }
}

TEST_CASE("cubic site map jet matches the hand expansion on one site") {
  // single saddle site, no coupling: x' = 0.5 x + g x^2, y' = 2 y + h x^2
  auto model = make_rotor(0, 0.0, 0.7, 0.3);
  auto spec = JetSpec::get(1, 3);
  std::vector<Jet> delta(3, Jet(spec));
  delta[1].c[1] = 1.0;  // x = s
  auto out = model->expand_jet(State(3, 0.0), delta);
  REQUIRE(out[1].c[1] == Catch::Approx(0.5));
  REQUIRE(out[1].c[2] == Catch::Approx(0.7));
  REQUIRE(out[2].c[2] == Catch::Approx(0.3));
  REQUIRE(out[2].c[1] == 0.0);
}

TEST_CASE("power map composes and the inverse map inverts") {
  auto base = make_rotor(2, 0.01, 0.5, 0.5);
  PowerMap f2(base, 2);
  std::mt19937_64 rng(31);
  State x = random_state(base->geometry(), rng, 0.02);
  State direct = base->eval(base->eval(x));
  State viaf2 = f2.eval(x);
  for (size_t k = 0; k < x.size(); ++k) REQUIRE(viaf2[k] == Catch::Approx(direct[k]).margin(1e-14));

  InverseMap finv(base);
  State z = base->eval(x);
  State back = finv.eval(z);
  for (size_t k = 0; k < x.size(); ++k) REQUIRE(back[k] == Catch::Approx(x[k]).margin(1e-12));

  // DF^{-1} = (DF)^{-1} at the preimage
  Eigen::MatrixXd di = finv.differential(z).to_dense();
  Eigen::MatrixXd d = base->differential(x).to_dense();
  REQUIRE((di * d - Eigen::MatrixXd::Identity(d.rows(), d.cols())).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("zero field integrates to the identity") {
  struct ZeroField : VectorField {
    LatticeGeometry geo;
    ExcitedSites exc;
    ZeroField(LatticeGeometry g) : geo(g) {}
    const LatticeGeometry& geometry() const override { return geo; }
    const ExcitedSites& excited() const override { return exc; }
    State eval(const State& x) const override { return State(x.size(), 0.0); }
    DecayOperator differential(const State&) const override { return DecayOperator(geo); }
    std::vector<Jet> expand_jet(const State&, const std::vector<Jet>& d) const override {
      return std::vector<Jet>(d.size(), Jet(d[0].spec));
    }
    RefBases reference_bases() const override { return {}; }
  } zf(kg_geo(2));

  std::mt19937_64 rng(37);
  State x = random_state(zf.geometry(), rng, 1.0);
  State y = integrate_flow(zf, x, 1.7, 1e-2);
  for (size_t k = 0; k < x.size(); ++k) REQUIRE(y[k] == x[k]);
}

TEST_CASE("linearized saddle flow matches the matrix exponential to 1e-8") {
  // uncoupled Klein-Gordon site with beta = 0: qdot = p, pdot = nu^2 q,
  // whose flow is exp(t [[0,1],[nu^2,0]]) in closed form
  const double nu = 1.2;
  State x = {0.3, -0.2};
  KleinGordonParams q;
  q.nu0 = nu;
  q.nu = 0.5;
  q.beta = 0.0;
  q.epsilon = 0.0;
  auto field_lin = std::make_shared<KleinGordonField>(kg_geo(0), ExcitedSites{{0}}, q);
  auto [y, v] = integrate_flow_variational(*field_lin, x, 1.0, 1e-3);
  Eigen::Matrix2d expm;
  const double t = 1.0;
  expm << std::cosh(nu * t), std::sinh(nu * t) / nu, nu * std::sinh(nu * t), std::cosh(nu * t);
  Eigen::Vector2d closed = expm * Eigen::Vector2d(x[0], x[1]);
  REQUIRE(y[0] == Catch::Approx(closed[0]).margin(1e-8));
  REQUIRE(y[1] == Catch::Approx(closed[1]).margin(1e-8));
  REQUIRE((v - expm).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("integrator shows fourth-order step convergence via Richardson") {
  auto field = make_kg(2, 0.05);
  State x(field->geometry().state_dim(), 0.0);
  x[0] = 0.2;  // displace one site
  x[field->excited().sites[0] * 2] = 0.1;
  State fine = integrate_flow(*field, x, 1.0, 1.25e-3);
  State mid = integrate_flow(*field, x, 1.0, 2.5e-3);
  State coarse = integrate_flow(*field, x, 1.0, 5e-3);
  double e_mid = 0.0, e_coarse = 0.0;
  for (size_t k = 0; k < x.size(); ++k) {
    e_mid = std::max(e_mid, std::abs(mid[k] - fine[k]));
    e_coarse = std::max(e_coarse, std::abs(coarse[k] - fine[k]));
  }
  double ratio = e_coarse / e_mid;
  REQUIRE(ratio > 11.0);  // ~16 for order 4
  REQUIRE(ratio < 24.0);
}

TEST_CASE("flow group property S_{t+s} = S_t o S_s to integrator tolerance") {
  auto field = make_kg(2, 0.05);
  State x(field->geometry().state_dim(), 0.0);
  x[0] = 0.15;
  State a = integrate_flow(*field, x, 0.9, 1e-3);
  State b = integrate_flow(*field, integrate_flow(*field, x, 0.4, 1e-3), 0.5, 1e-3);
  for (size_t k = 0; k < x.size(); ++k) REQUIRE(a[k] == Catch::Approx(b[k]).margin(1e-11));
}

TEST_CASE("blow-up guard trips") {
  auto field = make_kg(1, 0.0);
  State x(field->geometry().state_dim(), 0.0);
  x[field->excited().sites[0] * 2] = 0.5;  // off the saddle's stable set
  REQUIRE_THROWS_AS(integrate_flow(*field, x, 50.0, 1e-2, 1.0), BlowUp);
}

TEST_CASE("standard map differential matches finite differences") {
  LatticeGeometry geo;
  geo.dim_n = 1;
  geo.box_radius = 2;
  geo.boundary = Boundary::periodic;
  geo.torus_dirs = 1;
  geo.real_dirs = 1;
  CoupledStandardParams par;
  par.kstd = 0.9;
  par.epsilon = 0.05;
  par.coupling.cv = 1.0;
  par.coupling.range = 2;
  CoupledStandardMap model(geo, ExcitedSites{{geo.flat({0, 0, 0, 0})}}, par);

  std::mt19937_64 rng(41);
  State x = random_state(geo, rng, 0.3);
  Eigen::MatrixXd d = model.differential(x).to_dense();
  const double step = 1e-6;
  for (int j = 0; j < geo.state_dim(); ++j) {
    State xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    State fp = model.eval(xp), fm = model.eval(xm);
    for (int i = 0; i < geo.state_dim(); ++i)
      REQUIRE(d(i, j) == Catch::Approx((fp[i] - fm[i]) / (2.0 * step)).margin(1e-8));
  }
}
