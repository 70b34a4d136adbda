#pragma once

#include "wl/torus_solver.hpp"
#include "wl/transfer.hpp"

namespace wl {

/// W(theta, s): per-component Fourier series in theta (grid values) tensored
/// with a truncated Taylor polynomial in the conjugacy variable s.  Slot
/// indexing follows the shared JetSpec; rank 0 is the torus itself (kept in
/// `base`), every higher rank is a (state_dim x nodes) coefficient table.
struct FourierTaylorMap {
  AngleGrid grid;
  std::shared_ptr<const JetSpec> spec;
  TorusEmbedding base;
  std::vector<Eigen::MatrixXd> coef;  // indexed by slot; slot 0 unused

  void allocate(int state_dim) {
    coef.assign(spec->count(), Eigen::MatrixXd::Zero(state_dim, grid.total()));
  }

  int state_dim() const { return static_cast<int>(coef.empty() ? 0 : coef[0].rows()); }

  /// Displacement jets (no base) at a node, ranks 1..max_rank.
  std::vector<Jet> node_jets(int t, int max_rank) const {
    std::vector<Jet> out(state_dim(), Jet(spec));
    int hi = spec->order_begin[std::min(max_rank, spec->max_order) + 1];
    for (int slot = 1; slot < hi; ++slot)
      for (int c = 0; c < state_dim(); ++c) out[c].c[slot] = coef[slot](c, t);
    return out;
  }

  /// Phase-space point W(theta_t, s).
  State eval_node(int t, const Eigen::VectorXd& s) const {
    State x = base.state_at_node(t);
    Eigen::VectorXd mono = monomials(s);
    for (int slot = 1; slot < spec->count(); ++slot)
      for (int c = 0; c < state_dim(); ++c) x[c] += coef[slot](c, t) * mono[slot];
    return x;
  }

  Eigen::VectorXd monomials(const Eigen::VectorXd& s) const {
    Eigen::VectorXd mono(spec->count());
    for (int slot = 0; slot < spec->count(); ++slot) {
      double v = 1.0;
      for (int q = 0; q < spec->dvars; ++q)
        for (int e = 0; e < spec->midx[slot][q]; ++e) v *= s[q];
      mono[slot] = v;
    }
    return mono;
  }

  /// Coefficient tables of W(theta + shift, .) (base not included).
  std::vector<Eigen::MatrixXd> shifted_coef(const Eigen::VectorXcd& phases) const {
    std::vector<Eigen::MatrixXd> out = coef;
    if (grid.D == 0) return out;
    for (int slot = 1; slot < spec->count(); ++slot)
      for (int c = 0; c < state_dim(); ++c)
        out[slot].row(c) = grid.shifted_grid(coef[slot].row(c).transpose(), phases).transpose();
    return out;
  }

  /// sup_i min_k Gamma^{-1}(i-c_k) ||(W)_i|| over coefficient tables, the
  /// localization profile of the manifold (rank >= from_rank part).
  double localized_profile(const DecayFunction& gamma, const ExcitedSites& c, int from_rank,
                           std::vector<double>* per_site = nullptr) const {
    const auto& geo = base.geometry;
    double sup = 0.0;
    if (per_site) per_site->assign(geo.sites(), 0.0);
    for (int i = 0; i < geo.sites(); ++i) {
      double bn = 0.0;
      for (int slot = spec->order_begin[from_rank]; slot < spec->count(); ++slot)
        for (int q = 0; q < geo.block_dim(); ++q)
          bn = std::max(bn, coef[slot].row(i * geo.block_dim() + q).cwiseAbs().maxCoeff());
      if (per_site) (*per_site)[i] = bn;
      if (bn == 0.0) continue;
      double inf = std::numeric_limits<double>::infinity();
      for (int ck : c.sites) inf = std::min(inf, bn / gamma.gamma_pair(i, ck));
      sup = std::max(sup, inf);
    }
    return sup;
  }
};

/// P(theta, s): bundle polynomial in s of degree <= L with Fourier-theta
/// coefficients, valued in the stable frame coordinates.
struct BundlePolynomial {
  AngleGrid grid;
  std::shared_ptr<const JetSpec> spec;
  int degree = 1;
  std::vector<Eigen::MatrixXd> coef;  // slot -> (d_s x nodes)

  void allocate(int ds) { coef.assign(spec->count(), Eigen::MatrixXd::Zero(ds, grid.total())); }

  int ds() const { return static_cast<int>(coef.empty() ? 0 : coef[0].rows()); }

  std::vector<Jet> node_jets(int t, int max_rank) const {
    std::vector<Jet> out(ds(), Jet(spec));
    int hi = spec->order_begin[std::min({max_rank, degree, spec->max_order}) + 1];
    for (int slot = 1; slot < hi; ++slot)
      for (int q = 0; q < ds(); ++q) out[q].c[slot] = coef[slot](q, t);
    return out;
  }

  Eigen::VectorXd eval_node(int t, const Eigen::VectorXd& s) const {
    Eigen::VectorXd mono(spec->count());
    for (int slot = 0; slot < spec->count(); ++slot) {
      double v = 1.0;
      for (int q = 0; q < spec->dvars; ++q)
        for (int e = 0; e < spec->midx[slot][q]; ++e) v *= s[q];
      mono[slot] = v;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(ds());
    for (int slot = 1; slot < spec->count(); ++slot) out += coef[slot].col(t) * mono[slot];
    return out;
  }
};

enum class PStyle { polynomial, linear };
enum class TailMode { taylor_extend, contraction };

struct ManifoldOptions {
  int L = 5;
  int Lmax = 10;
  PStyle style = PStyle::polynomial;
  double tol_order = 1e-10;
  double solve_tol = 1e-15;
  int max_iter = 600;
  double tol_tail = 1e-12;
  int j_max = 200;
  double series_margin = 0.05;
  double delta = 0.0;  // 0: choose automatically in contraction mode
  double contraction_target = 0.5;
  double rho_s = 1.0;  // nominal s-ball after scaling
};

struct TailReport {
  TailMode mode = TailMode::taylor_extend;
  double delta = 1.0;
  double contraction_factor = 0.0;
  double final_increment = 0.0;
  double t_zero_norm = 0.0;  // ||T(0)||, the ball-mapping certificate input
  int sweeps = 0;
  bool ball_certified = false;
};

struct ManifoldPair {
  FourierTaylorMap W;
  BundlePolynomial P;
  int L = 1;
  PStyle style = PStyle::polynomial;
  double delta = 1.0;
  std::vector<double> order_defects;  // per solved order
  TailReport tail;
};

/// s-only scaling: order-k coefficients pick up delta^{k-1}; the invariance
/// equation is preserved exactly at the coefficient level.
inline void rescale(ManifoldPair& pair, double delta) {
  const auto& spec = *pair.W.spec;
  for (int slot = 1; slot < spec.count(); ++slot) {
    double f = std::pow(delta, spec.order_of(slot) - 1);
    pair.W.coef[slot] *= f;
    pair.P.coef[slot] *= f;
  }
  pair.delta *= delta;
}

namespace detail {

/// Matrix of the substitution q(s) -> q(G s) on homogeneous coefficients of
/// total order `order`: out_coeffs = in_coeffs * S.
inline Eigen::MatrixXd monomial_substitution(const std::shared_ptr<const JetSpec>& spec,
                                             const Eigen::MatrixXd& g, int order) {
  const int lo = spec->order_begin[order], hi = spec->order_begin[order + 1];
  const int n = hi - lo;
  const int d = spec->dvars;
  std::vector<Jet> lin(d, Jet(spec));
  for (int q = 0; q < d; ++q)
    for (int r = 0; r < d; ++r)
      if (g(q, r) != 0.0) lin[q] += Jet::variable(spec, r, g(q, r));
  Eigen::MatrixXd s(n, n);
  for (int a = 0; a < n; ++a) {
    Jet m(spec, 1.0);
    for (int q = 0; q < d; ++q)
      for (int e = 0; e < spec->midx[lo + a][q]; ++e) m = m * lin[q];
    for (int b = 0; b < n; ++b) s(a, b) = m.c[lo + b];
  }
  return s;
}

inline void shift_slot_tables(std::vector<Eigen::MatrixXd>& coef, const AngleGrid& grid,
                              const Eigen::VectorXcd& phases, int slot_lo, int slot_hi) {
  if (grid.D == 0) return;
  for (int slot = slot_lo; slot < slot_hi; ++slot)
    for (int c = 0; c < coef[slot].rows(); ++c)
      coef[slot].row(c) = grid.shifted_grid(coef[slot].row(c).transpose(), phases).transpose();
}

}  // namespace detail

/// Order matching + tail for the conjugacy F(W(theta,s)) = W(theta+omega,
/// P(theta,s)) on a certified splitting.
class ManifoldSolver {
 public:
  ManifoldSolver(const MapModel& model, const TorusEmbedding& K, const Splitting& split,
                 ManifoldOptions opt)
      : model_(model), K_(K), sp_(split), opt_(opt) {
    if (sp_.ds < 1) throw ConfigError("manifold solve needs a nonempty stable bundle");
    spec_ = JetSpec::get(sp_.ds, opt_.Lmax);
    nodes_ = K_.grid.total();
    ph_fwd_ = K_.grid.shift_phases(K_.omega);
    std::vector<double> neg = K_.omega;
    for (double& w : neg) w = -w;
    ph_bwd_ = K_.grid.shift_phases(neg);
    a_lu_.resize(nodes_);
    msh_lu_.resize(nodes_);
    gcu_lu_.resize(nodes_);
    const int n = model_.geometry().state_dim();
    for (int t = 0; t < nodes_; ++t) {
      a_lu_[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(sp_.A[t]);
      Eigen::MatrixXd m(n, n);
      m.middleCols(0, sp_.ds) = sp_.Vs_sh[t];
      m.middleCols(sp_.ds, n - sp_.ds) = sp_.Vcu_sh[t];
      msh_lu_[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(m);
      if (sp_.dc + sp_.du > 0) gcu_lu_[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(sp_.Gcu[t]);
    }
  }

  const std::shared_ptr<const JetSpec>& spec() const { return spec_; }

  /// Orders 0 and 1: W(theta,0) = K, D_sW = stable frame, P linear part the
  /// reduced stable cocycle.
  ManifoldPair initial_pair() const {
    ManifoldPair pair;
    pair.L = opt_.L;
    pair.style = opt_.style;
    pair.W.grid = K_.grid;
    pair.W.spec = spec_;
    pair.W.base = K_;
    pair.W.allocate(model_.geometry().state_dim());
    pair.P.grid = K_.grid;
    pair.P.spec = spec_;
    pair.P.degree = opt_.L;
    pair.P.allocate(sp_.ds);
    for (int q = 0; q < sp_.ds; ++q) {
      std::array<std::uint8_t, kMaxJetVars> key{};
      key[q] = 1;
      int slot = spec_->index_of(key);
      for (int t = 0; t < nodes_; ++t) {
        pair.W.coef[slot].col(t) = sp_.Vs[t].col(q);
        pair.P.coef[slot].col(t) = sp_.Gs[t].col(q);
      }
    }
    return pair;
  }

  /// r_i tables (rank-i slot offset -> state_dim x nodes), the order-i
  /// coefficient of F o W^{<i} - W^{<i} o (T_omega, P^{<i}).
  std::vector<Eigen::MatrixXd> rhs_order(const ManifoldPair& pair, int i) const {
    return order_slice(pair, i, i - 1);
  }

  /// Residual of the full order-i equation after the solve (ranks <= i kept).
  double order_defect(const ManifoldPair& pair, int i) const {
    std::vector<Eigen::MatrixXd> sl = order_slice(pair, i, i);
    double d = 0.0;
    for (const auto& m : sl) d = std::max(d, m.cwiseAbs().maxCoeff());
    return d;
  }

  /// Solve the projected order-i equations.  stable_by_iteration selects the
  /// shifted-Neumann solve of the stable block (linear-P style and tail
  /// orders); otherwise the stable block is absorbed into P_i.
  void solve_projected_order(ManifoldPair& pair, int i, bool stable_by_iteration) const {
    std::vector<Eigen::MatrixXd> r = rhs_order(pair, i);
    const int lo = spec_->order_begin[i], hi = spec_->order_begin[i + 1];
    const int ni = hi - lo;
    const int n = model_.geometry().state_dim();
    const int dcu = sp_.dc + sp_.du;

    // frame coordinates of r at theta+omega
    std::vector<Eigen::MatrixXd> rho_s(nodes_), rho_cu(nodes_);
    for (int t = 0; t < nodes_; ++t) {
      Eigen::MatrixXd cols(n, ni);
      for (int a = 0; a < ni; ++a) cols.col(a) = r[a].col(t);
      Eigen::MatrixXd coords = msh_lu_[t].solve(cols);
      rho_s[t] = coords.topRows(sp_.ds);
      rho_cu[t] = coords.bottomRows(dcu);
    }

    std::vector<Eigen::MatrixXd> subs(nodes_);
    for (int t = 0; t < nodes_; ++t) subs[t] = detail::monomial_substitution(spec_, sp_.Gs[t], i);

    // cu block: v = Gcu^{-1} [ (v o T) S_i - rho_cu ]
    std::vector<Eigen::MatrixXd> v(nodes_, Eigen::MatrixXd::Zero(dcu, ni));
    if (dcu > 0) iterate_block(v, gcu_lu_, subs, rho_cu, ni);

    // stable block
    std::vector<Eigen::MatrixXd> u(nodes_, Eigen::MatrixXd::Zero(sp_.ds, ni));
    if (stable_by_iteration) {
      std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> gs_lu(nodes_);
      for (int t = 0; t < nodes_; ++t) gs_lu[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(sp_.Gs[t]);
      iterate_block(u, gs_lu, subs, rho_s, ni);
    } else {
      for (int t = 0; t < nodes_; ++t) {
        for (int a = 0; a < ni; ++a) pair.P.coef[lo + a].col(t) = rho_s[t].col(a);
      }
    }

    for (int t = 0; t < nodes_; ++t) {
      Eigen::MatrixXd w = sp_.Vcu[t] * v[t];
      if (stable_by_iteration) w += sp_.Vs[t] * u[t];
      for (int a = 0; a < ni; ++a) pair.W.coef[lo + a].col(t) = w.col(a);
    }
    double defect = order_defect(pair, i);
    pair.order_defects.push_back(defect);
    WL_DEBUG("manifold order %d defect %.3e", i, defect);
    if (!(defect < opt_.tol_order))
      throw NoConvergence("order-" + std::to_string(i) + " projected equation defect " +
                              std::to_string(defect) + " above tol_order",
                          {defect});
  }

  /// Orders 2..L with the configured style.
  void solve_low_orders(ManifoldPair& pair) const {
    for (int i = 2; i <= opt_.L; ++i)
      solve_projected_order(pair, i, opt_.style == PStyle::linear);
  }

  /// Unique tail beyond order L by continued order matching (P frozen).
  void solve_tail_taylor(ManifoldPair& pair) const {
    for (int i = opt_.L + 1; i <= opt_.Lmax; ++i) solve_projected_order(pair, i, true);
    pair.tail.mode = TailMode::taylor_extend;
    pair.tail.delta = pair.delta;
  }

  /// Apply S^{-1} (S H = DF(K) H - H o Q_omega) to tail tables eta (ranks
  /// > L), by the convergent iteration H <- A^{-1}(H o Q + eta).
  std::vector<Eigen::MatrixXd> apply_S_inverse(const ManifoldPair& pair,
                                               const std::vector<Eigen::MatrixXd>& eta,
                                               double* defect_out = nullptr) const {
    const int n = model_.geometry().state_dim();
    std::vector<Eigen::MatrixXd> h(spec_->count(), Eigen::MatrixXd::Zero(n, nodes_));
    double prev_inc = std::numeric_limits<double>::infinity();
    int diverging = 0;
    double q_ratio = 0.0;
    for (int j = 0; j < opt_.j_max; ++j) {
      std::vector<Eigen::MatrixXd> hq = compose_with_Q(pair, h);
      double inc = 0.0;
      for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
        Eigen::MatrixXd rhs = hq[slot] + eta[slot];
        Eigen::MatrixXd nh(n, nodes_);
        for (int t = 0; t < nodes_; ++t) nh.col(t) = a_lu_[t].solve(rhs.col(t));
        inc = std::max(inc, (nh - h[slot]).cwiseAbs().maxCoeff());
        h[slot] = nh;
      }
      if (inc < opt_.tol_tail * 1e-2) break;
      q_ratio = prev_inc > 0.0 && std::isfinite(prev_inc) ? inc / prev_inc : 0.0;
      if (q_ratio >= 1.0 - opt_.series_margin) {
        if (++diverging >= 3) throw SeriesDiverging("S^{-1} series terms are not contracting");
      } else {
        diverging = 0;
      }
      prev_inc = inc;
    }
    if (defect_out) {
      // || A H - H o Q - eta || on the tail ranks
      std::vector<Eigen::MatrixXd> hq = compose_with_Q(pair, h);
      double d = 0.0;
      for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
        Eigen::MatrixXd ah(n, nodes_);
        for (int t = 0; t < nodes_; ++t) ah.col(t) = sp_.A[t] * h[slot].col(t);
        d = std::max(d, (ah - hq[slot] - eta[slot]).cwiseAbs().maxCoeff());
      }
      *defect_out = d;
    }
    return h;
  }

  /// Contraction tail: iterate T(W^>) = S^{-1}[-N o (W^< + W^>) - DF(K) W^< +
  /// W^< o Q] on the scaled pair.
  void solve_tail_contraction(ManifoldPair& pair) const {
    double delta = opt_.delta > 0.0 ? opt_.delta : 1.0;
    for (int attempt = 0;; ++attempt) {
      ManifoldPair scaled = pair;
      if (delta != 1.0) rescale(scaled, delta);
      TailReport rep = run_contraction(scaled);
      if (rep.contraction_factor < opt_.contraction_target || opt_.delta > 0.0 || attempt >= 6) {
        if (rep.contraction_factor >= 1.0)
          throw ContractionFailure("tail iteration factor " +
                                   std::to_string(rep.contraction_factor) + " >= 1");
        // unscale the tail back into the caller's normalization
        for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
          double f = std::pow(delta, spec_->order_of(slot) - 1);
          pair.W.coef[slot] = scaled.W.coef[slot] / f;
        }
        pair.tail = rep;
        pair.tail.delta = delta;
        return;
      }
      delta *= 0.5;
    }
  }

  /// Re-run the tail iteration from whatever tail `pair` currently carries
  /// (restart experiments for the uniqueness certificate).
  void resolve_tail_from(ManifoldPair& pair) const {
    double prev_inc = 0.0;
    (void)prev_inc;
    for (int sweep = 0; sweep < 3 * (opt_.Lmax - opt_.L) + 12; ++sweep) {
      std::vector<Eigen::MatrixXd> h = apply_T(pair);
      double inc = 0.0;
      for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
        inc = std::max(inc, (h[slot] - pair.W.coef[slot]).cwiseAbs().maxCoeff());
        pair.W.coef[slot] = h[slot];
      }
      if (inc < opt_.tol_tail) break;
    }
  }

  /// Measured first-sweep contraction factor at a given scaling (diagnostic
  /// used by the scaling experiments).
  double measure_contraction(const ManifoldPair& pair, double delta) const {
    ManifoldPair scaled = pair;
    rescale(scaled, delta);
    for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot)
      scaled.W.coef[slot].setZero();
    std::vector<Eigen::MatrixXd> t0 = apply_T(scaled);
    double n1 = 0.0;
    for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
      scaled.W.coef[slot] = t0[slot];
      n1 = std::max(n1, t0[slot].cwiseAbs().maxCoeff());
    }
    std::vector<Eigen::MatrixXd> t1 = apply_T(scaled);
    double n2 = 0.0;
    for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot)
      n2 = std::max(n2, (t1[slot] - scaled.W.coef[slot]).cwiseAbs().maxCoeff());
    return n1 > 0.0 ? n2 / n1 : 0.0;
  }

  ManifoldPair solve(TailMode mode = TailMode::taylor_extend) const {
    ManifoldPair pair = initial_pair();
    solve_low_orders(pair);
    if (mode == TailMode::taylor_extend)
      solve_tail_taylor(pair);
    else
      solve_tail_contraction(pair);
    return pair;
  }

 private:
  const MapModel& model_;
  const TorusEmbedding& K_;
  const Splitting& sp_;
  ManifoldOptions opt_;
  std::shared_ptr<const JetSpec> spec_;
  int nodes_ = 0;
  Eigen::VectorXcd ph_fwd_, ph_bwd_;
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> a_lu_, msh_lu_, gcu_lu_;

  // Fixed-point iteration x(theta) = Glu^{-1}[ (x o T)(theta) S_i(theta) - rho(theta) ].
  void iterate_block(std::vector<Eigen::MatrixXd>& x,
                     const std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>>& glu,
                     const std::vector<Eigen::MatrixXd>& subs,
                     const std::vector<Eigen::MatrixXd>& rho, int ni) const {
    const int d = static_cast<int>(x[0].rows());
    Eigen::VectorXd fn(nodes_);
    for (int it = 0; it < opt_.max_iter; ++it) {
      // x o T
      std::vector<Eigen::MatrixXd> xsh = x;
      if (K_.grid.D > 0)
        for (int rr = 0; rr < d; ++rr)
          for (int a = 0; a < ni; ++a) {
            for (int t = 0; t < nodes_; ++t) fn[t] = x[t](rr, a);
            Eigen::VectorXd sh = K_.grid.shifted_grid(fn, ph_fwd_);
            for (int t = 0; t < nodes_; ++t) xsh[t](rr, a) = sh[t];
          }
      double inc = 0.0;
      for (int t = 0; t < nodes_; ++t) {
        Eigen::MatrixXd nx = glu[t].solve(xsh[t] * subs[t] - rho[t]);
        inc = std::max(inc, (nx - x[t]).cwiseAbs().maxCoeff());
        x[t] = nx;
      }
      if (inc < opt_.solve_tol) return;
    }
    throw NoConvergence("projected-order fixed point did not converge", {});
  }

  // rank-i slice of F o W^{<=known} - W^{<=known} o (T, P^{<=known})
  std::vector<Eigen::MatrixXd> order_slice(const ManifoldPair& pair, int i, int known) const {
    const int lo = spec_->order_begin[i], hi = spec_->order_begin[i + 1];
    const int n = model_.geometry().state_dim();
    std::vector<Eigen::MatrixXd> out(hi - lo, Eigen::MatrixXd::Zero(n, nodes_));
    std::vector<Eigen::MatrixXd> wsh = pair.W.shifted_coef(ph_fwd_);
    for (int t = 0; t < nodes_; ++t) {
      std::vector<Jet> delta = pair.W.node_jets(t, known);
      std::vector<Jet> jf = model_.expand_jet(K_.state_at_node(t), delta);
      std::vector<Jet> inner = pair.P.node_jets(t, known);
      for (int c = 0; c < n; ++c) {
        Jet outer(spec_);
        int ohi = spec_->order_begin[std::min(known, spec_->max_order) + 1];
        for (int slot = 1; slot < ohi; ++slot) outer.c[slot] = wsh[slot](c, t);
        Jet jc = compose(outer, inner);
        for (int a = 0; a < hi - lo; ++a) out[a](c, t) = jf[c].c[lo + a] - jc.c[lo + a];
      }
    }
    return out;
  }

  // (H o Q_omega) for tail tables: shift, then substitute P.
  std::vector<Eigen::MatrixXd> compose_with_Q(const ManifoldPair& pair,
                                              const std::vector<Eigen::MatrixXd>& h) const {
    const int n = model_.geometry().state_dim();
    std::vector<Eigen::MatrixXd> hs = h;
    detail::shift_slot_tables(hs, K_.grid, ph_fwd_, spec_->order_begin[pair.L + 1], spec_->count());
    std::vector<Eigen::MatrixXd> out(spec_->count(), Eigen::MatrixXd::Zero(n, nodes_));
    for (int t = 0; t < nodes_; ++t) {
      std::vector<Jet> inner = pair.P.node_jets(t, pair.L);
      for (int c = 0; c < n; ++c) {
        Jet outer(spec_);
        bool any = false;
        for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot) {
          outer.c[slot] = hs[slot](c, t);
          any = any || outer.c[slot] != 0.0;
        }
        if (!any) continue;
        Jet jc = compose(outer, inner);
        for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot)
          out[slot](c, t) = jc.c[slot];
      }
    }
    return out;
  }

  // One application of T to the tail stored in `pair` (scaled coordinates).
  std::vector<Eigen::MatrixXd> apply_T(const ManifoldPair& pair) const {
    const int n = model_.geometry().state_dim();
    const double delta = pair.delta;
    std::vector<Eigen::MatrixXd> wsh = pair.W.shifted_coef(ph_fwd_);
    std::vector<Eigen::MatrixXd> eta(spec_->count(), Eigen::MatrixXd::Zero(n, nodes_));
    for (int t = 0; t < nodes_; ++t) {
      State kt = K_.state_at_node(t);
      State fkt = model_.eval(kt);
      // N o (theta, W^< + W^>) in scaled coordinates: delta^{-1} N(theta, delta v)
      std::vector<Jet> vfull = pair.W.node_jets(t, spec_->max_order);
      std::vector<Jet> vd = vfull;
      for (auto& j : vd) j *= delta;
      std::vector<Jet> g = model_.expand_jet(kt, vd);
      std::vector<Jet> wle = pair.W.node_jets(t, pair.L);
      std::vector<Jet> inner = pair.P.node_jets(t, pair.L);
      for (int c = 0; c < n; ++c) {
        // N = G - G(theta,0) - D_s G . (delta v); the linear term uses A
        Jet nj = g[c];
        nj.c[0] -= fkt[c];
        for (int cc = 0; cc < n; ++cc)
          if (sp_.A[t](c, cc) != 0.0) nj -= sp_.A[t](c, cc) * vd[cc];
        nj *= 1.0 / delta;
        // - A W^<
        Jet t2(spec_);
        for (int cc = 0; cc < n; ++cc)
          if (sp_.A[t](c, cc) != 0.0) t2 += sp_.A[t](c, cc) * wle[cc];
        // W^< o Q
        Jet outer(spec_);
        int ohi = spec_->order_begin[pair.L + 1];
        for (int slot = 1; slot < ohi; ++slot) outer.c[slot] = wsh[slot](c, t);
        Jet t3 = compose(outer, inner);
        for (int slot = spec_->order_begin[pair.L + 1]; slot < spec_->count(); ++slot)
          eta[slot](c, t) = -nj.c[slot] - t2.c[slot] + t3.c[slot];
      }
    }
    return apply_S_inverse(pair, eta);
  }

  TailReport run_contraction(ManifoldPair& scaled) const {
    TailReport rep;
    rep.mode = TailMode::contraction;
    const int tail_lo = spec_->order_begin[scaled.L + 1];
    for (int slot = tail_lo; slot < spec_->count(); ++slot) scaled.W.coef[slot].setZero();
    double prev_inc = 0.0;
    for (int sweep = 0; sweep < 3 * (opt_.Lmax - opt_.L) + 12; ++sweep) {
      std::vector<Eigen::MatrixXd> h = apply_T(scaled);
      double inc = 0.0, mag = 0.0;
      for (int slot = tail_lo; slot < spec_->count(); ++slot) {
        inc = std::max(inc, (h[slot] - scaled.W.coef[slot]).cwiseAbs().maxCoeff());
        mag = std::max(mag, h[slot].cwiseAbs().maxCoeff());
        scaled.W.coef[slot] = h[slot];
      }
      if (sweep == 0) rep.t_zero_norm = mag;
      if (sweep == 1 && prev_inc > 0.0) rep.contraction_factor = inc / prev_inc;
      prev_inc = inc;
      rep.final_increment = inc;
      rep.sweeps = sweep + 1;
      if (inc < opt_.tol_tail) break;
    }
    rep.ball_certified =
        rep.contraction_factor < 1.0 &&
        rep.t_zero_norm <= (1.0 - rep.contraction_factor) * (opt_.rho_s / 3.0);
    return rep;
  }
};

/// sup over nodes of the coefficient bounds on ||D^i_s N|| for the scaled
/// nonlinear remainder N^delta(theta, s) = delta^{-1} N(theta, delta V^s(theta) s),
/// N = G - G(theta,0) - D_sG(theta,0) s.  Must decrease as delta drops.
inline std::vector<double> scaled_nonlinearity_norms(const MapModel& model,
                                                     const TorusEmbedding& K, const Splitting& sp,
                                                     double delta, int upto) {
  auto spec = JetSpec::get(sp.ds, upto);
  const int n = model.geometry().state_dim();
  std::vector<double> out(upto + 1, 0.0);
  for (int t = 0; t < K.grid.total(); ++t) {
    State kt = K.state_at_node(t);
    State fkt = model.eval(kt);
    std::vector<Jet> v(n, Jet(spec));
    for (int c = 0; c < n; ++c)
      for (int q = 0; q < sp.ds; ++q)
        if (sp.Vs[t](c, q) != 0.0) v[c] += Jet::variable(spec, q, delta * sp.Vs[t](c, q));
    std::vector<Jet> g = model.expand_jet(kt, v);
    for (int c = 0; c < n; ++c) {
      Jet nj = g[c];
      nj.c[0] -= fkt[c];
      for (int cc = 0; cc < n; ++cc)
        if (sp.A[t](c, cc) != 0.0) nj -= sp.A[t](c, cc) * v[cc];
      nj *= 1.0 / delta;
      // |D^i| on the unit ball bounded by sum over rank-i slots of i!/alpha! |c_alpha|
      for (int i = 0; i <= upto; ++i) {
        double acc = 0.0;
        for (int slot = spec->order_begin[i]; slot < spec->order_begin[i + 1]; ++slot) {
          double multi = 1.0;
          double fact = 1.0;
          for (int k = 2; k <= i; ++k) fact *= k;
          double denom = 1.0;
          for (int q = 0; q < spec->dvars; ++q)
            for (int e = 2; e <= spec->midx[slot][q]; ++e) denom *= e;
          multi = fact / denom;
          acc += multi * std::abs(nj.c[slot]);
        }
        out[i] = std::max(out[i], acc);
      }
    }
  }
  return out;
}

struct ConjugacyMatch {
  BundlePolynomial R;
  double cu_defect = 0.0;  // transversal mismatch while matching orders
};

/// Given the pair (W, P) and a transported left side lhs(node) =
/// jets of Phi(W(theta_node, .)) (full values), find the bundle polynomial R
/// with Phi o W = W o (T_shift, R) + O(s^{L+1}) by order matching in the
/// stable coordinates; the center+unstable coordinates must match on their
/// own and their mismatch is reported.
inline ConjugacyMatch match_conjugacy(
    const ManifoldPair& pair, const Splitting& sp, const std::vector<double>& shift,
    const std::function<std::vector<Jet>(int)>& lhs) {
  const auto spec = pair.W.spec;
  const AngleGrid& grid = pair.W.grid;
  const int nodes = grid.total();
  const int n = pair.W.state_dim();
  const int L = pair.L;

  ConjugacyMatch out;
  out.R.grid = grid;
  out.R.spec = spec;
  out.R.degree = L;
  out.R.allocate(sp.ds);

  Eigen::VectorXcd ph = grid.shift_phases(shift);
  std::vector<Eigen::MatrixXd> wsh = pair.W.shifted_coef(ph);
  std::vector<Eigen::MatrixXd> vs_sh = sp.Vs, vcu_sh = sp.Vcu;
  detail::shift_slot_tables(vs_sh, grid, ph, 0, static_cast<int>(vs_sh.size()));
  detail::shift_slot_tables(vcu_sh, grid, ph, 0, static_cast<int>(vcu_sh.size()));
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> mlu(nodes);
  for (int t = 0; t < nodes; ++t) {
    Eigen::MatrixXd m(n, n);
    m.middleCols(0, sp.ds) = vs_sh[t];
    m.middleCols(sp.ds, n - sp.ds) = vcu_sh[t];
    mlu[t] = Eigen::PartialPivLU<Eigen::MatrixXd>(m);
  }

  std::vector<std::vector<Jet>> lhs_jets(nodes);
  for (int t = 0; t < nodes; ++t) lhs_jets[t] = lhs(t);

  for (int i = 1; i <= L; ++i) {
    const int lo = spec->order_begin[i], hi = spec->order_begin[i + 1];
    for (int t = 0; t < nodes; ++t) {
      std::vector<Jet> inner = out.R.node_jets(t, i - 1);
      Eigen::MatrixXd diff(n, hi - lo);
      for (int c = 0; c < n; ++c) {
        Jet outer(spec);
        for (int slot = 1; slot < spec->order_begin[std::min(i, spec->max_order) + 1]; ++slot)
          outer.c[slot] = wsh[slot](c, t);
        Jet jc = i == 1 ? Jet(spec) : compose(outer, inner);
        for (int a = 0; a < hi - lo; ++a) diff(c, a) = lhs_jets[t][c].c[lo + a] - jc.c[lo + a];
      }
      Eigen::MatrixXd coords = mlu[t].solve(diff);
      for (int a = 0; a < hi - lo; ++a) out.R.coef[lo + a].col(t) = coords.topRows(sp.ds).col(a);
      if (n > sp.ds)
        out.cu_defect = std::max(out.cu_defect, coords.bottomRows(n - sp.ds).cwiseAbs().maxCoeff());
    }
  }
  return out;
}

/// R(theta+(n-1)shift, .) o ... o R(theta, .), truncated at the polynomial
/// degree; verifies the n-fold reduction against the pair's own P.
inline BundlePolynomial compose_bundle_poly(const BundlePolynomial& r,
                                            const std::vector<double>& shift, int n) {
  BundlePolynomial acc = r;
  const AngleGrid& grid = r.grid;
  for (int step = 1; step < n; ++step) {
    std::vector<double> total = shift;
    for (double& w : total) w *= step;
    std::vector<Eigen::MatrixXd> rsh = r.coef;
    detail::shift_slot_tables(rsh, grid, grid.shift_phases(total), 1,
                              static_cast<int>(rsh.size()));
    BundlePolynomial next = acc;
    for (int t = 0; t < grid.total(); ++t) {
      std::vector<Jet> inner = acc.node_jets(t, r.degree);
      for (int q = 0; q < r.ds(); ++q) {
        Jet outer(r.spec);
        for (int slot = 1; slot < r.spec->order_begin[r.degree + 1]; ++slot)
          outer.c[slot] = rsh[slot](q, t);
        Jet jc = compose(outer, inner);
        for (int slot = 1; slot < r.spec->order_begin[r.degree + 1]; ++slot)
          next.coef[slot](q, t) = jc.c[slot];
      }
    }
    acc = next;
  }
  return acc;
}

struct RootMapResult {
  BundlePolynomial R;
  double cu_defect = 0.0;       // transversal mismatch of the matching
  double compose_defect = 0.0;  // sup |R^{(n)} - P| over coefficients
};

/// From the pair solved for F^n, derive the bundle polynomial R with
/// F o W(theta, s) = W(theta + omega_base, R(theta, s)) and verify that the
/// n-fold shifted composition of R reproduces P.
inline RootMapResult derive_root_map(const ManifoldPair& pair, const Splitting& sp,
                                     const MapModel& model_f,
                                     const std::vector<double>& omega_base, int n) {
  const AngleGrid& grid = pair.W.grid;
  auto lhs = [&](int t) {
    std::vector<Jet> delta = pair.W.node_jets(t, pair.L);
    return model_f.expand_jet(pair.W.base.state_at_node(t), delta);
  };
  ConjugacyMatch m = match_conjugacy(pair, sp, omega_base, lhs);
  RootMapResult out;
  out.R = m.R;
  out.cu_defect = m.cu_defect;
  BundlePolynomial rn = compose_bundle_poly(out.R, omega_base, n);
  double d = 0.0;
  for (int slot = 1; slot < pair.P.spec->order_begin[pair.P.degree + 1]; ++slot)
    d = std::max(d, (rn.coef[slot] - pair.P.coef[slot]).cwiseAbs().maxCoeff());
  out.compose_defect = d;
  return out;
}

}  // namespace wl
