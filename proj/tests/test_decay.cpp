#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "wl/decay.hpp"
#include "wl/localized.hpp"

using namespace wl;

namespace {

LatticeGeometry geo1d(int R, int l = 1, int d = 2, Boundary b = Boundary::frozen) {
  LatticeGeometry g;
  g.dim_n = 1;
  g.box_radius = R;
  g.boundary = b;
  g.torus_dirs = l;
  g.real_dirs = d;
  return g;
}

// Brute-force recomputation of both axioms straight from the definition.
double oracle_axiom1_sum(const DecayFunction& g) {
  double s = 0.0;
  for (int j = 0; j < g.geometry.sites(); ++j)
    s += g.gamma(g.geometry.coords(j));
  return s;
}

double oracle_axiom2_worst(const DecayFunction& g) {
  const auto& geo = g.geometry;
  double worst = 0.0;
  for (int i = 0; i < geo.sites(); ++i)
    for (int k = 0; k < geo.sites(); ++k) {
      double conv = 0.0;
      for (int j = 0; j < geo.sites(); ++j) conv += g.gamma_pair(i, j) * g.gamma_pair(j, k);
      worst = std::max(worst, conv / g.gamma_pair(i, k));
    }
  return worst;
}

DecayOperator random_operator(const LatticeGeometry& g, std::mt19937_64& rng, double density = 0.6) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  DecayOperator a(g);
  for (int i = 0; i < g.sites(); ++i)
    for (int j = 0; j < g.sites(); ++j) {
      if (pick(rng) > density) continue;
      Eigen::MatrixXd m(g.block_dim(), g.block_dim());
      for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
      // taper entries with distance so norms stay O(1)
      m *= std::exp(-1.0 * g.distance(i, j));
      a.entries.emplace(std::make_pair(i, j), std::move(m));
    }
  return a;
}

}  // namespace

TEST_CASE("decay function construction maximizes a under both axioms") {
  auto g = make_decay_function(1.0, 2.0, geo1d(8));
  auto rep = verify_decay_axioms(g);
  REQUIRE(rep.axiom1_margin >= 0.0);
  REQUIRE(rep.axiom2_worst_ratio <= 1.0);

  // independent oracle agrees with the reported margins
  REQUIRE(1.0 - oracle_axiom1_sum(g) == Catch::Approx(rep.axiom1_margin).margin(1e-14));
  REQUIRE(oracle_axiom2_worst(g) == Catch::Approx(rep.axiom2_worst_ratio).margin(1e-12));

  // maximality: the next representable a upward breaks an axiom
  DecayFunction g2 = g;
  g2.a = g.a * (1.0 + 1e-9);
  auto rep2 = verify_decay_axioms(g2);
  REQUIRE((rep2.axiom1_margin < 0.0 || rep2.axiom2_worst_ratio > 1.0));

  REQUIRE(g.gamma(SiteCoords{}) == Catch::Approx(g.a));  // Gamma(0) = a
}

TEST_CASE("pure exponential decay is feasible only with a severely reduced a") {
  auto g = make_decay_function(1.0, 0.0, geo1d(8));
  auto rep = verify_decay_axioms(g);
  REQUIRE(rep.axiom2_worst_ratio <= 1.0);
  // with the axiom-1-maximal normalization the convolution axiom fails:
  // the straight-line sum gains a factor growing linearly in |i-k|
  DecayFunction gmax = g;
  gmax.a = 1.0 / detail::axiom1_sum_shape(g);
  REQUIRE(verify_decay_axioms(gmax).axiom2_worst_ratio > 1.0);
  REQUIRE(g.a < 0.5 * gmax.a);
}

TEST_CASE("decay construction rejects degenerate shapes") {
  REQUIRE_THROWS_AS(make_decay_function(-1.0, 2.0, geo1d(4)), ConfigError);
  REQUIRE_THROWS_AS(make_decay_function(0.0, 0.0, geo1d(4)), NoValidNormalization);
  auto g = make_decay_function(0.0, 2.0, geo1d(4));
  REQUIRE(verify_decay_axioms(g).pass());
}

TEST_CASE("scaling a breaks axiom 1 with negative margin") {
  auto g = make_decay_function(1.0, 2.0, geo1d(4));
  DecayFunction bad = g;
  bad.a = 2.0 / detail::axiom1_sum_shape(g);
  auto rep = verify_decay_axioms(bad);
  REQUIRE(rep.axiom1_margin < 0.0);
}

TEST_CASE("localized vector norm matches the sup-inf definition") {
  auto geo = geo1d(4);
  auto g = make_decay_function(1.0, 2.0, geo);
  ExcitedSites c{{geo.flat({0, 0, 0, 0})}};

  LocalizedVector v(geo);
  SECTION("unit mass at the excited site") {
    v.block(c.sites[0])[0] = 1.0;
    REQUIRE(localized_vector_norm(v, c, g) == Catch::Approx(1.0 / g.a));
  }
  SECTION("zero vector") { REQUIRE(localized_vector_norm(v, c, g) == 0.0); }
  SECTION("random sparse vector, two excited sites") {
    ExcitedSites c2{{geo.flat({-2, 0, 0, 0}), geo.flat({3, 0, 0, 0})}};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int s = 0; s < geo.sites(); s += 2) v.block(s)[1] = u(rng);
    double expect = 0.0;
    for (int i = 0; i < geo.sites(); ++i) {
      double bn = v.block_norm(i);
      double inf = std::numeric_limits<double>::infinity();
      for (int ck : c2.sites) inf = std::min(inf, bn / g.gamma_pair(i, ck));
      expect = std::max(expect, inf);
    }
    REQUIRE(localized_vector_norm(v, c2, g) == Catch::Approx(expect));
  }
  SECTION("empty excited set is rejected") {
    REQUIRE_THROWS_AS(localized_vector_norm(v, ExcitedSites{}, g), EmptyExcitedSet);
  }
}

TEST_CASE("operator norms: identity, single block, exhaustive oracle") {
  auto geo = geo1d(3);
  auto g = make_decay_function(1.0, 2.0, geo);

  auto id = DecayOperator::identity(geo);
  REQUIRE(operator_norm_gamma(id, g) == Catch::Approx(1.0 / g.a));

  DecayOperator a(geo);
  int i0 = geo.flat({-1, 0, 0, 0}), j0 = geo.flat({2, 0, 0, 0});
  a.block(i0, j0)(1, 2) = 0.7;
  REQUIRE(operator_norm_gamma(a, g) == Catch::Approx(0.7 / g.gamma_pair(i0, j0)));

  std::mt19937_64 rng(11);
  DecayOperator r = random_operator(geo, rng, 1.0);
  double expect = 0.0;
  for (int i = 0; i < geo.sites(); ++i)
    for (int j = 0; j < geo.sites(); ++j) {
      const Eigen::MatrixXd* m = r.find(i, j);
      if (m) expect = std::max(expect, inf_norm(*m) / g.gamma_pair(i, j));
    }
  REQUIRE(operator_norm_gamma(r, g) == Catch::Approx(expect));
}

TEST_CASE("composition: identity, submultiplicativity, contraction oracle") {
  auto geo = geo1d(3);
  auto g = make_decay_function(1.0, 2.0, geo);
  std::mt19937_64 rng(13);

  DecayOperator a = random_operator(geo, rng);
  auto id = DecayOperator::identity(geo);
  DecayOperator ai = compose(a, id);
  for (const auto& [key, m] : a.entries) {
    const Eigen::MatrixXd* n = ai.find(key.first, key.second);
    REQUIRE(n != nullptr);
    REQUIRE((m - *n).cwiseAbs().maxCoeff() == 0.0);
  }

  ExcitedSites c{{geo.flat({0, 0, 0, 0})}};
  for (int trial = 0; trial < 100; ++trial) {
    DecayOperator x = random_operator(geo, rng), y = random_operator(geo, rng);
    DecayOperator xy = compose(x, y);
    REQUIRE(operator_norm_gamma(xy, g) <=
            operator_norm_gamma(x, g) * operator_norm_gamma(y, g) + 1e-12);
    REQUIRE(operator_norm_localized(xy, g, c) <=
            operator_norm_localized(x, g, c) * operator_norm_localized(y, g, c) + 1e-12);
  }
}

TEST_CASE("bilinear contraction reproduces the triple-loop oracle") {
  auto geo = geo1d(2, 0, 2);  // small box, d = 2 blocks
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  MultilinearDecayOperator b(geo, 2);
  for (int i = 0; i < geo.sites(); ++i)
    for (int m1 = 0; m1 < geo.sites(); ++m1)
      for (int m2 = 0; m2 < geo.sites(); ++m2) {
        Eigen::MatrixXd blk(2, 4);
        for (int r = 0; r < 2; ++r)
          for (int cc = 0; cc < 4; ++cc) blk(r, cc) = u(rng);
        b.entries.emplace(std::vector<int>{i, m1, m2}, std::move(blk));
      }
  DecayOperator b1 = random_operator(geo, rng, 1.0), b2 = random_operator(geo, rng, 1.0);
  MultilinearDecayOperator cont = contract(b, {&b1, &b2});

  LocalizedVector v1(geo), v2(geo);
  for (int k = 0; k < geo.state_dim(); ++k) {
    v1.blocks[k] = u(rng);
    v2.blocks[k] = u(rng);
  }
  // oracle: apply the legs first, then the bilinear map
  LocalizedVector w1 = b1.apply(v1), w2 = b2.apply(v2);
  LocalizedVector lhs = cont.apply({&v1, &v2});
  LocalizedVector rhs = b.apply({&w1, &w2});
  for (int k = 0; k < geo.state_dim(); ++k)
    REQUIRE(lhs.blocks[k] == Catch::Approx(rhs.blocks[k]).margin(1e-12));

  // localized multilinear submultiplicative bound
  auto g = make_decay_function(1.0, 2.0, geo);
  ExcitedSites c{{geo.flat({0, 0, 0, 0})}};
  REQUIRE(multilinear_norm_localized(cont, g, c) <=
          multilinear_norm_localized(b, g, c) * operator_norm_localized(b1, g, c) *
                  operator_norm_localized(b2, g, c) +
              1e-9);
}

TEST_CASE("norms are absolutely homogeneous and satisfy the triangle inequality") {
  auto geo = geo1d(3);
  auto g = make_decay_function(1.0, 2.0, geo);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    DecayOperator x = random_operator(geo, rng), y = random_operator(geo, rng);
    double t = u(rng);
    DecayOperator tx = x;
    for (auto& [k, m] : tx.entries) m *= t;
    REQUIRE(operator_norm_gamma(tx, g) ==
            Catch::Approx(std::abs(t) * operator_norm_gamma(x, g)).margin(1e-12));
    DecayOperator sum = x;
    for (const auto& [k, m] : y.entries) sum.block(k.first, k.second) += m;
    REQUIRE(operator_norm_gamma(sum, g) <=
            operator_norm_gamma(x, g) + operator_norm_gamma(y, g) + 1e-12);
  }
}

TEST_CASE("periodic boundary wraps distances") {
  auto geo = geo1d(2, 1, 1, Boundary::periodic);
  REQUIRE(geo.distance(geo.flat({-2, 0, 0, 0}), geo.flat({2, 0, 0, 0})) == 1);
  auto g = make_decay_function(1.0, 2.0, geo);
  REQUIRE(verify_decay_axioms(g).pass());
}
