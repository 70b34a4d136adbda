#pragma once

#include "wl/splitting.hpp"

namespace wl {

enum class TransferFlavor { left_multiply, argument_insert };

/// theta-family symbol of a transfer operator acting on theta-families of
/// multilinear maps: left_multiply composes the symbol from the left with a
/// shift, argument_insert feeds it into one argument slot.  Powers of either
/// reduce to shifted cocycle products of the symbol, which is what the
/// radius estimate uses.
struct TransferOperator {
  AngleGrid grid;
  std::vector<double> omega;
  std::vector<Eigen::MatrixXd> symbol;
  TransferFlavor flavor = TransferFlavor::left_multiply;
};

struct RadiusEstimate {
  double raw = 0.0;           // ||P_n||^{1/n} at n = n_max
  double extrapolated = 0.0;  // limit estimate from a + b/n fit
  std::vector<std::pair<int, double>> samples;
};

/// Spectral radius estimate via the radius formula lim ||T^n||^{1/n}:
/// sup-over-theta norms of the shifted cocycle products at a Fibonacci
/// subsequence of n (friendly to quasi-periodic Birkhoff sums), with a
/// 1/n Richardson extrapolation of log ||P_n||^{1/n}.
inline RadiusEstimate spectral_radius(const TransferOperator& op, int n_max) {
  RadiusEstimate est;
  if (op.symbol.empty() || op.symbol[0].rows() == 0) return est;
  std::vector<int> fib = {1, 2};
  while (fib.back() < n_max) fib.push_back(fib[fib.size() - 1] + fib[fib.size() - 2]);
  if (fib.back() > n_max) fib.back() = n_max;
  while (fib.size() > 3) fib.erase(fib.begin());

  std::vector<double> logsup =
      cocycle_log_sup_norms(op.grid, op.omega, op.symbol, fib.back(), false, false);
  for (int n : fib) est.samples.emplace_back(n, std::exp(logsup[n - 1] / n));
  est.raw = est.samples.back().second;

  // fit log r_n = a + b/n through the last samples
  const int k = static_cast<int>(est.samples.size());
  Eigen::MatrixXd mat(k, 2);
  Eigen::VectorXd y(k);
  for (int i = 0; i < k; ++i) {
    mat(i, 0) = 1.0;
    mat(i, 1) = 1.0 / est.samples[i].first;
    y[i] = std::log(std::max(est.samples[i].second, 1e-300));
  }
  Eigen::Vector2d ab = mat.colPivHouseholderQr().solve(y);
  est.extrapolated = std::exp(ab[0]);
  return est;
}

/// Closed annulus enclosing a transfer-operator spectrum.
struct Annulus {
  double lo = 0.0;
  double hi = 0.0;
  bool overlaps(const Annulus& o, double margin) const {
    return !(hi * (1.0 + margin) < o.lo || o.hi * (1.0 + margin) < lo);
  }
};

struct NonresonanceInput {
  Annulus stable;    // Spec(L_{A^s})
  Annulus center_u;  // Spec(L_{A^{c+u}})
  double a_inv_sup = 1.0;               // sup_theta ||A(theta)^{-1}||
  std::vector<double> stable_products;  // sup cocycle norms ||A^s o T ... A^s||, index n-1
  double flow_as_sup = 0.0;             // sup ||A^s|| (flow-style product bound)
};

/// Annuli from certified whiskered rates: Spec(L_{A^s}) in [0, mu1],
/// Spec(L_{A^{c+u}}) outside 1/mu3.
inline NonresonanceInput nonresonance_from_rates(double mu1, double mu2, double mu3,
                                                 double a_inv_sup) {
  NonresonanceInput in;
  in.stable = {0.0, mu1};
  in.center_u = {1.0 / mu3, std::max(mu3, 1.0 / std::max(mu2, 1e-12))};
  in.a_inv_sup = a_inv_sup;
  for (int n = 1; n <= 8; ++n) in.stable_products.push_back(std::pow(mu1, n));
  in.flow_as_sup = mu1;
  return in;
}

/// Measured annuli from a splitting: upper edges from the forward transfer
/// radii, lower edges from the reciprocal of the inverse-symbol radii.
inline NonresonanceInput nonresonance_from_splitting(const Splitting& sp, int n_max = 24) {
  NonresonanceInput in;
  auto radius = [&](const std::vector<Eigen::MatrixXd>& sym, bool invert) {
    std::vector<Eigen::MatrixXd> s = sym;
    if (invert)
      for (auto& m : s) m = m.partialPivLu().inverse();
    TransferOperator op{sp.grid, sp.omega, s, TransferFlavor::left_multiply};
    return spectral_radius(op, n_max).extrapolated;
  };
  if (sp.ds > 0) {
    double hi = radius(sp.Gs, false);
    double lo_inv = radius(sp.Gs, true);
    in.stable = {lo_inv > 0.0 ? 1.0 / lo_inv : 0.0, hi};
  }
  if (sp.dc + sp.du > 0) {
    double hi = radius(sp.Gcu, false);
    double lo_inv = radius(sp.Gcu, true);
    in.center_u = {lo_inv > 0.0 ? 1.0 / lo_inv : 0.0, hi};
  }
  double ainv = 0.0;
  for (const auto& a : sp.A) ainv = std::max(ainv, inf_norm(a.partialPivLu().inverse()));
  in.a_inv_sup = ainv;
  in.stable_products = cocycle_sup_norms(sp.grid, sp.omega, sp.Gs, 12, false, false);
  double asup = 0.0;
  for (const auto& g : sp.Gs) asup = std::max(asup, inf_norm(g));
  in.flow_as_sup = asup;
  return in;
}

struct OrderGapCertificate {
  int order = 0;
  Annulus stable_power;  // Spec(R^{1,omega}_{A^s})^i
  double gap = 0.0;      // center_u.lo - stable_power.hi
  bool resonant = false;
};

struct NonresonanceCertificate {
  std::vector<OrderGapCertificate> orders;
  int L = -1;               // smallest admissible matching degree
  bool p_linear_ok = false;
  double margin = 0.0;
  double map_condition = 0.0;   // ||A^s o T ... A^s||_{L+1 factors} max(1, ||A^-1||)
  double flow_condition = 0.0;  // ||A^s||^{L+1} ||A^-1||
  bool pass() const {
    for (const auto& o : orders)
      if (o.resonant) return false;
    return L >= 1;
  }
};

/// Certify the order-i solvability gaps: the i-th power of the stable
/// argument-insertion spectrum must stay strictly inside the inner edge of
/// the center+unstable annulus, and L must satisfy both contraction
/// conditions (shifted product for maps, plain power for flows).
inline NonresonanceCertificate check_nonresonance(const NonresonanceInput& in, int i_max,
                                                  double margin = 0.02) {
  NonresonanceCertificate cert;
  cert.margin = margin;
  for (int i = 1; i <= i_max; ++i) {
    OrderGapCertificate oc;
    oc.order = i;
    oc.stable_power = {std::pow(in.stable.lo, i), std::pow(in.stable.hi, i)};
    oc.gap = in.center_u.lo - oc.stable_power.hi;
    oc.resonant = oc.stable_power.hi * (1.0 + margin) >= in.center_u.lo;
    cert.orders.push_back(oc);
  }
  // smallest L with both conditions; Lnew-type inclusion needs
  // stable.hi^{K} / center_u.lo < 1 for all K > L, monotone in K.
  for (int L = 1; L + 1 <= static_cast<int>(in.stable_products.size()); ++L) {
    double prod = in.stable_products[L];  // L+1 factors at index L
    double map_cond = prod * std::max(1.0, in.a_inv_sup);
    double tail_cond = std::pow(in.stable.hi, L + 1) / std::max(in.center_u.lo, 1e-300);
    if (map_cond < 1.0 && tail_cond < 1.0) {
      cert.L = L;
      cert.map_condition = map_cond;
      cert.flow_condition = std::pow(in.flow_as_sup, L + 1) * in.a_inv_sup;
      break;
    }
  }
  // linear P needs (Spec R_{A^s})^i disjoint from Spec(L_{A^s}) for the
  // solvable orders; at i = 1 both sets coincide, so the test starts at 2.
  cert.p_linear_ok = cert.L >= 1;
  for (int i = 2; i <= std::max(cert.L, i_max); ++i)
    if (std::pow(in.stable.hi, i) * (1.0 + margin) >= in.stable.lo) cert.p_linear_ok = false;
  return cert;
}

/// ResonanceDetected helper for pipeline use.
inline void require_nonresonant(const NonresonanceCertificate& cert) {
  for (const auto& o : cert.orders)
    if (o.resonant)
      throw ResonanceDetected(
          "order " + std::to_string(o.order) + " stable power annulus [" +
              std::to_string(o.stable_power.lo) + ", " + std::to_string(o.stable_power.hi) +
              "] meets the center+unstable annulus",
          o.order);
  if (cert.L < 1) throw ResonanceDetected("no admissible matching degree L", 0);
}

}  // namespace wl
