#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "wl/common.hpp"

namespace wl {

constexpr int kMaxJetVars = 4;

/// Shared multi-index bookkeeping for truncated Taylor arithmetic in dvars
/// transverse variables up to total order max_order.  Slots are ordered by
/// total order, then lexicographically; a product table maps slot pairs to
/// the slot of the summed exponent (or -1 past the truncation order).
struct JetSpec {
  int dvars = 1;
  int max_order = 1;
  std::vector<std::array<std::uint8_t, kMaxJetVars>> midx;
  std::vector<int> order_begin;  // size max_order + 2
  std::vector<std::int32_t> prod;

  int count() const { return static_cast<int>(midx.size()); }

  int order_of(int slot) const {
    int o = 0;
    for (int q = 0; q < dvars; ++q) o += midx[slot][q];
    return o;
  }

  int index_of(const std::array<std::uint8_t, kMaxJetVars>& key) const {
    for (int s = 0; s < count(); ++s)
      if (midx[s] == key) return s;
    return -1;
  }

  static std::shared_ptr<const JetSpec> get(int dvars, int max_order) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::shared_ptr<const JetSpec>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(dvars, max_order);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto spec = std::make_shared<JetSpec>();
    spec->dvars = dvars;
    spec->max_order = max_order;
    spec->order_begin.assign(max_order + 2, 0);
    // enumerate multi-indices of each total order in lexicographic order
    for (int o = 0; o <= max_order; ++o) {
      spec->order_begin[o] = spec->count();
      std::array<std::uint8_t, kMaxJetVars> cur{};
      enumerate(*spec, cur, 0, o);
    }
    spec->order_begin[max_order + 1] = spec->count();
    const int n = spec->count();
    spec->prod.assign(static_cast<size_t>(n) * n, -1);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        if (spec->order_of(a) + spec->order_of(b) > max_order) continue;
        std::array<std::uint8_t, kMaxJetVars> s{};
        for (int q = 0; q < dvars; ++q)
          s[q] = static_cast<std::uint8_t>(spec->midx[a][q] + spec->midx[b][q]);
        spec->prod[static_cast<size_t>(a) * n + b] = spec->index_of(s);
      }
    cache.emplace(key, spec);
    return spec;
  }

 private:
  static void enumerate(JetSpec& spec, std::array<std::uint8_t, kMaxJetVars>& cur, int q,
                        int remaining) {
    if (q == spec.dvars - 1) {
      cur[q] = static_cast<std::uint8_t>(remaining);
      spec.midx.push_back(cur);
      cur[q] = 0;
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[q] = static_cast<std::uint8_t>(e);
      enumerate(spec, cur, q + 1, remaining - e);
    }
    cur[q] = 0;
  }
};

/// Truncated Taylor polynomial (jet) with real coefficients.
struct Jet {
  std::shared_ptr<const JetSpec> spec;
  std::vector<double> c;

  Jet() = default;
  explicit Jet(std::shared_ptr<const JetSpec> sp) : spec(std::move(sp)), c(spec->count(), 0.0) {}
  Jet(std::shared_ptr<const JetSpec> sp, double constant) : Jet(std::move(sp)) { c[0] = constant; }

  static Jet variable(std::shared_ptr<const JetSpec> sp, int q, double scale = 1.0) {
    Jet j(sp);
    std::array<std::uint8_t, kMaxJetVars> key{};
    key[q] = 1;
    j.c[sp->index_of(key)] = scale;
    return j;
  }

  double value() const { return c[0]; }

  Jet& operator+=(const Jet& o) {
    for (size_t k = 0; k < c.size(); ++k) c[k] += o.c[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    for (size_t k = 0; k < c.size(); ++k) c[k] -= o.c[k];
    return *this;
  }
  Jet& operator*=(double s) {
    for (double& x : c) x *= s;
    return *this;
  }
  Jet& operator+=(double s) {
    c[0] += s;
    return *this;
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }
  friend Jet operator+(Jet a, double s) { return a += s; }
  friend Jet operator+(double s, Jet a) { return a += s; }
  friend Jet operator-(Jet a, double s) {
    a.c[0] -= s;
    return a;
  }

  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet out(a.spec);
    const int n = a.spec->count();
    const std::int32_t* tab = a.spec->prod.data();
    for (int i = 0; i < n; ++i) {
      if (a.c[i] == 0.0) continue;
      const std::int32_t* row = tab + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        std::int32_t s = row[j];
        if (s >= 0) out.c[s] += a.c[i] * b.c[j];
      }
    }
    return out;
  }

  double sup_coeff() const { return sup_abs(c); }
};

inline Jet pow_int(const Jet& a, int e) {
  Jet out(a.spec, 1.0);
  for (int k = 0; k < e; ++k) out = out * a;
  return out;
}

/// f(v) for analytic f given the derivative series a_k = f^(k)(v0)/k! at the
/// jet's constant part v0.
inline Jet apply_series(const Jet& v, const std::vector<double>& a) {
  Jet w = v;
  w.c[0] = 0.0;
  Jet out(v.spec, a.back());
  for (int k = static_cast<int>(a.size()) - 2; k >= 0; --k) {
    out = out * w;
    out += a[k];
  }
  return out;
}

inline Jet sin2pi(const Jet& v) {
  const double twopi = 2.0 * M_PI;
  std::vector<double> a(v.spec->max_order + 1);
  double fact = 1.0;
  for (int k = 0; k <= v.spec->max_order; ++k) {
    if (k > 0) fact *= k;
    a[k] = std::pow(twopi, k) * std::sin(twopi * v.value() + 0.5 * M_PI * k) / fact;
  }
  return apply_series(v, a);
}

inline Jet cos2pi(const Jet& v) {
  const double twopi = 2.0 * M_PI;
  std::vector<double> a(v.spec->max_order + 1);
  double fact = 1.0;
  for (int k = 0; k <= v.spec->max_order; ++k) {
    if (k > 0) fact *= k;
    a[k] = std::pow(twopi, k) * std::cos(twopi * v.value() + 0.5 * M_PI * k) / fact;
  }
  return apply_series(v, a);
}

/// Substitute s_q -> inner[q] (inner jets with zero constant part).
inline Jet compose(const Jet& outer, const std::vector<Jet>& inner) {
  const auto& spec = *outer.spec;
  if (static_cast<int>(inner.size()) != spec.dvars)
    throw OrderMismatch("jet compose: wrong number of inner jets");
  for (const auto& g : inner)
    if (g.value() != 0.0) throw OrderMismatch("jet compose: inner jet must vanish at 0");
  // powers of each inner jet
  std::vector<std::vector<Jet>> pw(spec.dvars);
  for (int q = 0; q < spec.dvars; ++q) {
    pw[q].reserve(spec.max_order + 1);
    pw[q].push_back(Jet(outer.spec, 1.0));
    for (int e = 1; e <= spec.max_order; ++e) pw[q].push_back(pw[q][e - 1] * inner[q]);
  }
  Jet out(outer.spec, outer.c[0]);
  for (int s = 1; s < spec.count(); ++s) {
    if (outer.c[s] == 0.0) continue;
    Jet term(outer.spec, 1.0);
    for (int q = 0; q < spec.dvars; ++q) {
      int e = spec.midx[s][q];
      if (e > 0) term = term * pw[q][e];
    }
    out += term * outer.c[s];
  }
  return out;
}

/// Compositional inverse of a jet map f: R^d -> R^d with f(0) = 0 and
/// invertible linear part, by order-raising iteration g <- g + A^{-1}(id - f(g)).
inline std::vector<Jet> invert_jet_map(const std::vector<Jet>& f) {
  const auto spec = f[0].spec;
  const int d = spec->dvars;
  if (static_cast<int>(f.size()) != d) throw OrderMismatch("invert_jet_map: need d jets in d vars");
  // linear part
  Eigen::MatrixXd a(d, d);
  for (int r = 0; r < d; ++r)
    for (int q = 0; q < d; ++q) {
      std::array<std::uint8_t, kMaxJetVars> key{};
      key[q] = 1;
      a(r, q) = f[r].c[spec->index_of(key)];
    }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  if (std::abs(lu.determinant()) < 1e-14) throw NotInvertible("jet map has singular linear part");
  Eigen::MatrixXd ainv = lu.inverse();

  std::vector<Jet> g(d, Jet(spec));
  for (int r = 0; r < d; ++r)
    for (int q = 0; q < d; ++q)
      if (ainv(r, q) != 0.0) g[r] += Jet::variable(spec, q, ainv(r, q));
  for (int it = 0; it < spec->max_order; ++it) {
    std::vector<Jet> err(d, Jet(spec));
    for (int q = 0; q < d; ++q) err[q] = Jet::variable(spec, q) - compose(f[q], g);
    for (int r = 0; r < d; ++r)
      for (int q = 0; q < d; ++q)
        if (ainv(r, q) != 0.0) g[r] += err[q] * ainv(r, q);
  }
  return g;
}

}  // namespace wl
