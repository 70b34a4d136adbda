#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "wl/angle_grid.hpp"
#include "wl/taylor.hpp"

using namespace wl;

TEST_CASE("angle grid transforms are exact inverses and shifts are exact") {
  AngleGrid grid(1, 8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd f(grid.total());
  for (int t = 0; t < grid.total(); ++t) f[t] = u(rng);

  Eigen::VectorXd back = grid.to_grid(grid.to_modes(f));
  REQUIRE((back - f).cwiseAbs().maxCoeff() < 1e-13);

  // shift of a band-limited function is exact: compare against direct
  // evaluation of the mode sum at theta + omega
  const double omega = (std::sqrt(5.0) - 1.0) / 2.0;
  Eigen::VectorXcd modes = grid.to_modes(f);
  Eigen::VectorXd shifted = grid.shifted_grid(f, grid.shift_phases({omega}));
  for (int t = 0; t < grid.total(); ++t) {
    double theta = grid.node_theta(t)[0] + omega;
    REQUIRE(shifted[t] == Catch::Approx(grid.eval_modes(modes, {theta})).margin(1e-12));
  }
}

TEST_CASE("two-angle grid round trip") {
  AngleGrid grid(2, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd f(grid.total());
  for (int t = 0; t < grid.total(); ++t) f[t] = u(rng);
  REQUIRE((grid.to_grid(grid.to_modes(f)) - f).cwiseAbs().maxCoeff() < 1e-13);

  Eigen::VectorXd sh = grid.shifted_grid(f, grid.shift_phases({0.3, 0.7}));
  Eigen::VectorXcd modes = grid.to_modes(f);
  for (int t = 0; t < grid.total(); t += 7) {
    auto th = grid.node_theta(t);
    REQUIRE(sh[t] == Catch::Approx(grid.eval_modes(modes, {th[0] + 0.3, th[1] + 0.7})).margin(1e-12));
  }
}

TEST_CASE("analytic norm weights modes by e^{2 pi rho |m|}") {
  AngleGrid grid(1, 2);
  Eigen::VectorXcd modes = Eigen::VectorXcd::Zero(grid.total());
  // slot of mode m: m + n_theta
  modes[2] = 1.0;   // m = 0
  modes[4] = 0.5;   // m = 2
  double rho = 0.1;
  REQUIRE(grid.analytic_norm(modes, rho) ==
          Catch::Approx(1.0 + 0.5 * std::exp(2.0 * M_PI * rho * 2)));
}

TEST_CASE("jet multiplication and composition are coefficient-exact") {
  auto spec = JetSpec::get(1, 6);
  Jet x = Jet::variable(spec, 0);
  Jet f = 1.0 + 2.0 * x + 3.0 * x * x;  // 1 + 2x + 3x^2
  Jet g = f * f;
  REQUIRE(g.c[0] == Catch::Approx(1.0));
  REQUIRE(g.c[1] == Catch::Approx(4.0));
  REQUIRE(g.c[2] == Catch::Approx(10.0));
  REQUIRE(g.c[3] == Catch::Approx(12.0));
  REQUIRE(g.c[4] == Catch::Approx(9.0));

  // compose f with inner x -> x + x^2
  Jet inner = x + x * x;
  Jet h = compose(f, {inner});
  // f(x + x^2) = 1 + 2(x+x^2) + 3(x+x^2)^2 = 1 + 2x + 5x^2 + 6x^3 + 3x^4
  REQUIRE(h.c[0] == Catch::Approx(1.0));
  REQUIRE(h.c[1] == Catch::Approx(2.0));
  REQUIRE(h.c[2] == Catch::Approx(5.0));
  REQUIRE(h.c[3] == Catch::Approx(6.0));
  REQUIRE(h.c[4] == Catch::Approx(3.0));
}

TEST_CASE("two-variable jets track symmetric products") {
  auto spec = JetSpec::get(2, 4);
  Jet s0 = Jet::variable(spec, 0), s1 = Jet::variable(spec, 1);
  Jet f = s0 * s1 + 0.5 * s0 * s0;
  Jet g = f * f;
  // (s0 s1 + .5 s0^2)^2 = s0^2 s1^2 + s0^3 s1 + 0.25 s0^4
  std::array<std::uint8_t, kMaxJetVars> k22{{2, 2, 0, 0}}, k31{{3, 1, 0, 0}}, k40{{4, 0, 0, 0}};
  REQUIRE(g.c[spec->index_of(k22)] == Catch::Approx(1.0));
  REQUIRE(g.c[spec->index_of(k31)] == Catch::Approx(1.0));
  REQUIRE(g.c[spec->index_of(k40)] == Catch::Approx(0.25));
}

TEST_CASE("trig jets match finite differences of the closed form") {
  auto spec = JetSpec::get(1, 5);
  Jet v = Jet::variable(spec, 0, 0.3);
  v += 0.2;  // constant part
  Jet s = sin2pi(v);
  // derivative of sin(2 pi (0.2 + 0.3 t)) at t=0, order k: (2 pi 0.3)^k sin(0.4 pi + k pi/2)/k!
  double fact = 1.0;
  for (int k = 0; k <= 5; ++k) {
    if (k > 0) fact *= k;
    double expect = std::pow(2.0 * M_PI * 0.3, k) * std::sin(2.0 * M_PI * 0.2 + 0.5 * M_PI * k) / fact;
    REQUIRE(s.c[k] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("jet map inversion is a compositional inverse") {
  auto spec = JetSpec::get(2, 5);
  Jet s0 = Jet::variable(spec, 0), s1 = Jet::variable(spec, 1);
  std::vector<Jet> f = {2.0 * s0 + 0.3 * s1 + 0.5 * s0 * s1, -0.1 * s0 + 1.5 * s1 + 0.2 * s0 * s0};
  auto g = invert_jet_map(f);
  for (int r = 0; r < 2; ++r) {
    Jet check = compose(f[r], g);
    Jet id = Jet::variable(spec, r);
    for (int s = 0; s < spec->count(); ++s)
      REQUIRE(check.c[s] == Catch::Approx(id.c[s]).margin(1e-11));
  }
}
