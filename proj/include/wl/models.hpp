#pragma once

#include <memory>
#include <random>

#include "wl/localized.hpp"
#include "wl/taylor.hpp"

namespace wl {

using State = std::vector<double>;

inline double sin2pi(double x) { return std::sin(2.0 * M_PI * x); }
inline double cos2pi(double x) { return std::cos(2.0 * M_PI * x); }

/// Interaction strength profile gamma(k) = cv * exp(-alpha|k|) (1+|k|)^-p for
/// offsets 0 < |k| <= range; neighbors outside a frozen box contribute their
/// reference (pinned) values.
struct CouplingProfile {
  double cv = 1.0;
  double alpha = 1.0;
  double p = 2.0;
  int range = 0;

  double weight(int r) const { return cv * std::exp(-alpha * r) * std::pow(1.0 + r, -p); }
};

/// Neighbor table: per site, the coupled sites with their weights.  site = -1
/// marks a frozen out-of-box neighbor (reference values).
struct NeighborTable {
  std::vector<std::vector<std::pair<int, double>>> at;

  NeighborTable() = default;
  NeighborTable(const LatticeGeometry& g, const CouplingProfile& cp) {
    at.resize(g.sites());
    SiteCoords off{};
    for (int j = 0; j < g.sites(); ++j) build(g, cp, j, off, 0);
  }

 private:
  void build(const LatticeGeometry& g, const CouplingProfile& cp, int j, SiteCoords& off, int axis) {
    if (axis == g.dim_n) {
      int r = g.max_norm(off);
      if (r == 0 || r > cp.range) return;
      at[j].emplace_back(g.neighbor(j, off), cp.weight(r));
      return;
    }
    for (int v = -cp.range; v <= cp.range; ++v) {
      off[axis] = v;
      build(g, cp, j, off, axis + 1);
      off[axis] = 0;
    }
  }
};

/// Constant coordinate bases spanning the uncoupled stable/center/unstable
/// blocks; the splitting computation bootstraps its graph transforms here.
struct RefBases {
  Eigen::MatrixXd s, c, u;
};

// ---------------------------------------------------------------------------
// Lattice maps
// ---------------------------------------------------------------------------

class MapModel {
 public:
  virtual ~MapModel() = default;
  virtual const LatticeGeometry& geometry() const = 0;
  virtual const ExcitedSites& excited() const = 0;
  /// Rigid frequencies of the torus angles (l per excited site); empty when
  /// the model carries no rotor.
  virtual std::vector<double> angle_frequencies() const = 0;
  virtual State eval(const State& x) const = 0;
  virtual DecayOperator differential(const State& x) const = 0;
  /// F(base + delta) as jets, coefficient-wise exact at the jet truncation.
  virtual std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const = 0;
  virtual RefBases reference_bases() const = 0;
  /// Sup bound on the real (non-angle) coordinates of the working neighborhood.
  virtual double domain_radius() const { return 1e6; }

  void check_domain(const State& x) const {
    const auto& g = geometry();
    double r = domain_radius();
    for (int s = 0; s < g.sites(); ++s)
      for (int q = g.torus_dirs; q < g.block_dim(); ++q)
        if (std::abs(x[static_cast<size_t>(s) * g.block_dim() + q]) > r)
          throw OutOfDomain("state left the working neighborhood");
  }
};

/// Rotor-saddle lattice: every site carries (phi, x, y) in T x R^2.  Angles
/// rotate rigidly (frequency omega_k at excited site k, frozen elsewhere).
/// Excited sites carry a saddle x' = lambda x + g x^2, y' = y/lambda + h x^2;
/// the remaining sites rotate (x,y) by the angle 2*pi*alpha_rot.  Coupling of
/// size epsilon*gamma(k) feeds neighbor angles and (x,y) into the local
/// (x,y) equations only, and vanishes at the pinned reference state.
struct RotorSaddleParams {
  double lambda = 0.5;
  double g = 0.0;
  double h = 0.0;
  double alpha_rot = 0.41421356237309515;  // sqrt(2)-1
  std::vector<double> omega;
  double epsilon = 0.0;
  CouplingProfile coupling;
};

class RotorSaddleMap : public MapModel {
 public:
  RotorSaddleMap(const LatticeGeometry& g, const ExcitedSites& exc, RotorSaddleParams par)
      : geo_(g), exc_(exc), par_(std::move(par)), nbrs_(g, par_.coupling) {
    if (g.torus_dirs != 1 || g.real_dirs != 2)
      throw ConfigError("rotor_saddle needs per-site dims (l=1, d=2)");
    if (par_.omega.size() != exc_.sites.size())
      throw ConfigError("rotor_saddle needs one frequency per excited site");
    exc_rank_.assign(g.sites(), -1);
    for (int k = 0; k < exc_.count(); ++k) exc_rank_[exc_.sites[k]] = k;
    ca_ = cos2pi(par_.alpha_rot);
    sa_ = sin2pi(par_.alpha_rot);
  }

  const LatticeGeometry& geometry() const override { return geo_; }
  const ExcitedSites& excited() const override { return exc_; }
  std::vector<double> angle_frequencies() const override { return par_.omega; }
  const RotorSaddleParams& params() const { return par_; }

  double domain_radius() const override {
    double gh = std::max(std::abs(par_.g), std::abs(par_.h));
    return gh == 0.0 ? 1e6 : 0.8 * par_.lambda / (2.0 * gh);
  }

  State eval(const State& x) const override {
    check_domain(x);
    State out(x.size());
    for (int j = 0; j < geo_.sites(); ++j) site_map(j, x.data(), out.data(), [](double v) { return v; });
    return out;
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    auto spec = delta[0].spec;
    std::vector<Jet> in(delta.size(), Jet(spec));
    for (size_t k = 0; k < delta.size(); ++k) {
      in[k] = delta[k];
      in[k].c[0] += base[k];
    }
    std::vector<Jet> out(delta.size(), Jet(spec));
    for (int j = 0; j < geo_.sites(); ++j)
      site_map(j, in.data(), out.data(), [&](double v) { return Jet(spec, v); });
    for (size_t k = 0; k < out.size(); ++k) out[k].c.resize(spec->count());
    return out;
  }

  DecayOperator differential(const State& x) const override {
    DecayOperator a(geo_);
    const int bd = 3;
    for (int j = 0; j < geo_.sites(); ++j) {
      const double* b = x.data() + static_cast<size_t>(j) * bd;
      Eigen::MatrixXd& d = a.block(j, j);
      d = Eigen::MatrixXd::Zero(bd, bd);
      d(0, 0) = 1.0;
      if (exc_rank_[j] >= 0) {
        d(1, 1) = par_.lambda + 2.0 * par_.g * b[1];
        d(2, 1) = 2.0 * par_.h * b[1];
        d(2, 2) = 1.0 / par_.lambda;
      } else {
        d(1, 1) = ca_;
        d(1, 2) = -sa_;
        d(2, 1) = sa_;
        d(2, 2) = ca_;
      }
      for (const auto& [m, w] : nbrs_.at[j]) {
        if (m < 0) continue;  // frozen reference: all partials vanish there
        const double* bm = x.data() + static_cast<size_t>(m) * bd;
        Eigen::MatrixXd& e = a.block(j, m);
        double ew = par_.epsilon * w;
        // x-row: sin(2 pi phi_m) + x_m y_m
        e(1, 0) += ew * 2.0 * M_PI * cos2pi(bm[0]);
        e(1, 1) += ew * bm[2];
        e(1, 2) += ew * bm[1];
        // y-row: cos(2 pi phi_m) - 1 + x_m^2
        e(2, 0) += ew * (-2.0 * M_PI) * sin2pi(bm[0]);
        e(2, 1) += ew * 2.0 * bm[1];
      }
    }
    return a;
  }

  RefBases reference_bases() const override {
    const int n = geo_.state_dim();
    const int ne = exc_.count();
    RefBases rb;
    rb.s = Eigen::MatrixXd::Zero(n, ne);
    rb.u = Eigen::MatrixXd::Zero(n, ne);
    rb.c = Eigen::MatrixXd::Zero(n, n - 2 * ne);
    for (int k = 0; k < ne; ++k) {
      rb.s(exc_.sites[k] * 3 + 1, k) = 1.0;
      rb.u(exc_.sites[k] * 3 + 2, k) = 1.0;
    }
    int col = 0;
    for (int j = 0; j < geo_.sites(); ++j)
      for (int q = 0; q < 3; ++q) {
        if (exc_rank_[j] >= 0 && q > 0) continue;
        rb.c(j * 3 + q, col++) = 1.0;
      }
    return rb;
  }

 private:
  LatticeGeometry geo_;
  ExcitedSites exc_;
  RotorSaddleParams par_;
  NeighborTable nbrs_;
  std::vector<int> exc_rank_;
  double ca_ = 1.0, sa_ = 0.0;

  // One site of the map, shared between point evaluation (T = double) and
  // jet expansion (T = Jet); mk lifts constants to T.
  template <class T, class Mk>
  void site_map(int j, const T* in, T* out, Mk mk) const {
    const T* b = in + static_cast<size_t>(j) * 3;
    T* o = out + static_cast<size_t>(j) * 3;
    int rank = exc_rank_[j];
    o[0] = b[0] + (rank >= 0 ? par_.omega[rank] : 0.0);
    T cx = mk(0.0), cy = mk(0.0);
    if (par_.epsilon != 0.0) {
      for (const auto& [m, w] : nbrs_.at[j]) {
        if (m < 0) continue;  // reference contributions vanish identically
        const T* bm = in + static_cast<size_t>(m) * 3;
        cx += (sin2pi(bm[0]) + bm[1] * bm[2]) * w;
        cy += (cos2pi(bm[0]) - 1.0 + bm[1] * bm[1]) * w;
      }
      cx *= par_.epsilon;
      cy *= par_.epsilon;
    }
    if (rank >= 0) {
      o[1] = b[1] * par_.lambda + b[1] * b[1] * par_.g + cx;
      o[2] = b[2] * (1.0 / par_.lambda) + b[1] * b[1] * par_.h + cy;
    } else {
      o[1] = b[1] * ca_ + b[2] * (-sa_) + cx;
      o[2] = b[1] * sa_ + b[2] * ca_ + cy;
    }
  }
};

/// Kaneko-style coupled standard map on (phi, I) per site.
struct CoupledStandardParams {
  double kstd = 0.9;
  double epsilon = 0.0;
  CouplingProfile coupling;
};

class CoupledStandardMap : public MapModel {
 public:
  CoupledStandardMap(const LatticeGeometry& g, const ExcitedSites& exc, CoupledStandardParams par)
      : geo_(g), exc_(exc), par_(std::move(par)), nbrs_(g, par_.coupling) {
    if (g.torus_dirs != 1 || g.real_dirs != 1)
      throw ConfigError("coupled_standard needs per-site dims (l=1, d=1)");
  }

  const LatticeGeometry& geometry() const override { return geo_; }
  const ExcitedSites& excited() const override { return exc_; }
  std::vector<double> angle_frequencies() const override { return {}; }

  State eval(const State& x) const override {
    State out(x.size());
    for (int j = 0; j < geo_.sites(); ++j) site_map(j, x.data(), out.data(), [](double v) { return v; });
    return out;
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    auto spec = delta[0].spec;
    std::vector<Jet> in(delta.size(), Jet(spec));
    for (size_t k = 0; k < delta.size(); ++k) {
      in[k] = delta[k];
      in[k].c[0] += base[k];
    }
    std::vector<Jet> out(delta.size(), Jet(spec));
    for (int j = 0; j < geo_.sites(); ++j)
      site_map(j, in.data(), out.data(), [&](double v) { return Jet(spec, v); });
    return out;
  }

  DecayOperator differential(const State& x) const override {
    DecayOperator a(geo_);
    for (int j = 0; j < geo_.sites(); ++j) {
      const double* b = x.data() + static_cast<size_t>(j) * 2;
      double diag_phi = par_.kstd * cos2pi(b[0]);
      for (const auto& [m, w] : nbrs_.at[j]) {
        double phim = m < 0 ? 0.0 : x[static_cast<size_t>(m) * 2];
        double c = par_.epsilon * w * 2.0 * M_PI * cos2pi(phim - b[0]);
        diag_phi -= c;
        if (m >= 0) {
          Eigen::MatrixXd& e = a.block(j, m);
          e(1, 0) += c;
          e(0, 0) += c;
        }
      }
      Eigen::MatrixXd& d = a.block(j, j);
      d(1, 0) += diag_phi;
      d(1, 1) += 1.0;
      d(0, 0) += 1.0 + diag_phi;
      d(0, 1) += 1.0;
    }
    return a;
  }

  RefBases reference_bases() const override {
    RefBases rb;
    const int n = geo_.state_dim();
    rb.s.resize(n, 0);
    rb.u.resize(n, 0);
    rb.c = Eigen::MatrixXd::Identity(n, n);
    return rb;
  }

 private:
  LatticeGeometry geo_;
  ExcitedSites exc_;
  CoupledStandardParams par_;
  NeighborTable nbrs_;

  template <class T, class Mk>
  void site_map(int j, const T* in, T* out, Mk mk) const {
    const T* b = in + static_cast<size_t>(j) * 2;
    T* o = out + static_cast<size_t>(j) * 2;
    T kick = sin2pi(b[0]) * (par_.kstd / (2.0 * M_PI));
    if (par_.epsilon != 0.0) {
      T c = mk(0.0);
      for (const auto& [m, w] : nbrs_.at[j]) {
        T phim = m < 0 ? mk(0.0) : in[static_cast<size_t>(m) * 2];
        c += sin2pi(phim - b[0]) * w;
      }
      kick += c * par_.epsilon;
    }
    o[1] = b[1] + kick;
    o[0] = b[0] + o[1];
  }
};

// ---------------------------------------------------------------------------
// Wrappers: iterated map and numerical inverse
// ---------------------------------------------------------------------------

class PowerMap : public MapModel {
 public:
  PowerMap(std::shared_ptr<const MapModel> base, int n) : base_(std::move(base)), n_(n) {
    if (n_ < 1) throw ConfigError("PowerMap needs n >= 1");
  }

  const LatticeGeometry& geometry() const override { return base_->geometry(); }
  const ExcitedSites& excited() const override { return base_->excited(); }
  std::vector<double> angle_frequencies() const override {
    auto w = base_->angle_frequencies();
    for (double& v : w) v *= n_;
    return w;
  }
  double domain_radius() const override { return base_->domain_radius(); }
  RefBases reference_bases() const override { return base_->reference_bases(); }
  int power() const { return n_; }
  const MapModel& base() const { return *base_; }

  State eval(const State& x) const override {
    State cur = x;
    for (int k = 0; k < n_; ++k) cur = base_->eval(cur);
    return cur;
  }

  DecayOperator differential(const State& x) const override {
    State cur = x;
    Eigen::MatrixXd d = Eigen::MatrixXd::Identity(geometry().state_dim(), geometry().state_dim());
    for (int k = 0; k < n_; ++k) {
      d = base_->differential(cur).to_dense() * d;
      cur = base_->eval(cur);
    }
    return DecayOperator::from_dense(geometry(), d);
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    State cur = base;
    std::vector<Jet> jets = delta;
    for (int k = 0; k < n_; ++k) {
      jets = base_->expand_jet(cur, jets);
      cur = base_->eval(cur);
      for (size_t q = 0; q < jets.size(); ++q) jets[q].c[0] -= cur[q];
    }
    for (size_t q = 0; q < jets.size(); ++q) jets[q].c[0] += cur[q];
    return jets;
  }

 private:
  std::shared_ptr<const MapModel> base_;
  int n_;
};

/// F^{-1} realized pointwise by a Newton solve on the full truncated state;
/// differentials and jets follow from the inverse-function relations.
class InverseMap : public MapModel {
 public:
  explicit InverseMap(std::shared_ptr<const MapModel> base) : base_(std::move(base)) {}

  const LatticeGeometry& geometry() const override { return base_->geometry(); }
  const ExcitedSites& excited() const override { return base_->excited(); }
  std::vector<double> angle_frequencies() const override {
    auto w = base_->angle_frequencies();
    for (double& v : w) v = -v;
    return w;
  }
  double domain_radius() const override { return base_->domain_radius(); }

  RefBases reference_bases() const override {
    RefBases rb = base_->reference_bases();
    std::swap(rb.s, rb.u);
    return rb;
  }

  State eval(const State& z) const override {
    State x = z;  // initial guess; the maps are near-identity displacements
    for (int it = 0; it < 60; ++it) {
      State fx = base_->eval(x);
      Eigen::VectorXd r(z.size());
      for (size_t k = 0; k < z.size(); ++k) r[k] = fx[k] - z[k];
      if (r.cwiseAbs().maxCoeff() < 1e-14) return x;
      Eigen::MatrixXd d = base_->differential(x).to_dense();
      Eigen::VectorXd dx = d.partialPivLu().solve(r);
      for (size_t k = 0; k < z.size(); ++k) x[k] -= dx[k];
    }
    throw NoConvergence("inverse map Newton did not converge", {});
  }

  DecayOperator differential(const State& z) const override {
    State x = eval(z);
    Eigen::MatrixXd d = base_->differential(x).to_dense();
    return DecayOperator::from_dense(geometry(), d.partialPivLu().inverse());
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    // solve F(x0 + g) = base + delta with x0 = F^{-1}(base), by order raising
    State x0 = eval(base);
    auto spec = delta[0].spec;
    const int n = static_cast<int>(delta.size());
    Eigen::MatrixXd a = base_->differential(x0).to_dense();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    std::vector<Jet> g(n, Jet(spec));
    for (int it = 0; it <= spec->max_order; ++it) {
      std::vector<Jet> fg = base_->expand_jet(x0, g);
      // residual = base + delta - F(x0+g), with delta's constant part zero
      Eigen::MatrixXd err(n, spec->count());
      for (int q = 0; q < n; ++q)
        for (int s = 0; s < spec->count(); ++s)
          err(q, s) = (s == 0 ? base[q] : 0.0) + delta[q].c[s] - fg[q].c[s];
      Eigen::MatrixXd corr = lu.solve(err);
      for (int q = 0; q < n; ++q)
        for (int s = 0; s < spec->count(); ++s) g[q].c[s] += corr(q, s);
    }
    for (int q = 0; q < n; ++q) g[q].c[0] += x0[q];
    return g;
  }

 private:
  std::shared_ptr<const MapModel> base_;
};

// ---------------------------------------------------------------------------
// Lattice vector fields and the one-step integrator
// ---------------------------------------------------------------------------

class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual const LatticeGeometry& geometry() const = 0;
  virtual const ExcitedSites& excited() const = 0;
  virtual State eval(const State& x) const = 0;
  virtual DecayOperator differential(const State& x) const = 0;
  virtual std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const = 0;
  virtual RefBases reference_bases() const = 0;
};

/// Discretized Klein-Gordon lattice: per site (q, p) with
///   qdot = p,  pdot = nu_j^2 q - beta q^3 - eps sum_k gamma(k) U'(q_j - q_{j+k})
/// where U'(r) = sin(2 pi r)/(2 pi).  The excited site carries the strong
/// rate nu0 > nu; q = 0 is an exact equilibrium for every eps.
struct KleinGordonParams {
  double nu0 = 1.2;
  double nu = 0.5;
  double beta = 1.0;
  double epsilon = 0.0;
  CouplingProfile coupling;
};

class KleinGordonField : public VectorField {
 public:
  KleinGordonField(const LatticeGeometry& g, const ExcitedSites& exc, KleinGordonParams par)
      : geo_(g), exc_(exc), par_(std::move(par)), nbrs_(g, par_.coupling) {
    if (g.torus_dirs != 0 || g.real_dirs != 2)
      throw ConfigError("klein_gordon needs per-site dims (l=0, d=2)");
    nu_.assign(g.sites(), par_.nu);
    for (int s : exc_.sites) nu_[s] = par_.nu0;
  }

  const LatticeGeometry& geometry() const override { return geo_; }
  const ExcitedSites& excited() const override { return exc_; }
  const KleinGordonParams& params() const { return par_; }

  State eval(const State& x) const override {
    State out(x.size());
    for (int j = 0; j < geo_.sites(); ++j) site_field(j, x.data(), out.data(), [](double v) { return v; });
    return out;
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    auto spec = delta[0].spec;
    std::vector<Jet> in(delta.size(), Jet(spec));
    for (size_t k = 0; k < delta.size(); ++k) {
      in[k] = delta[k];
      in[k].c[0] += base[k];
    }
    std::vector<Jet> out(delta.size(), Jet(spec));
    for (int j = 0; j < geo_.sites(); ++j)
      site_field(j, in.data(), out.data(), [&](double v) { return Jet(spec, v); });
    return out;
  }

  DecayOperator differential(const State& x) const override {
    DecayOperator a(geo_);
    for (int j = 0; j < geo_.sites(); ++j) {
      const double* b = x.data() + static_cast<size_t>(j) * 2;
      Eigen::MatrixXd& d = a.block(j, j);
      d(0, 1) = 1.0;
      double diag = nu_[j] * nu_[j] - 3.0 * par_.beta * b[0] * b[0];
      for (const auto& [m, w] : nbrs_.at[j]) {
        double qm = m < 0 ? 0.0 : x[static_cast<size_t>(m) * 2];
        double upp = cos2pi(b[0] - qm);  // U''(r) = cos(2 pi r)
        diag -= par_.epsilon * w * upp;
        if (m >= 0) a.block(j, m)(1, 0) += par_.epsilon * w * upp;
      }
      d(1, 0) = diag;
    }
    return a;
  }

  RefBases reference_bases() const override {
    const int n = geo_.state_dim();
    const int ne = exc_.count();
    RefBases rb;
    rb.s = Eigen::MatrixXd::Zero(n, ne);
    rb.c = Eigen::MatrixXd::Zero(n, geo_.sites() - ne);
    rb.u = Eigen::MatrixXd::Zero(n, geo_.sites());
    int cc = 0;
    for (int j = 0; j < geo_.sites(); ++j) {
      double nrm = std::sqrt(1.0 + nu_[j] * nu_[j]);
      int k = exc_.rank_of(j);
      if (k >= 0) {
        rb.s(j * 2, k) = 1.0 / nrm;
        rb.s(j * 2 + 1, k) = -nu_[j] / nrm;
      } else {
        rb.c(j * 2, cc) = 1.0 / nrm;
        rb.c(j * 2 + 1, cc) = -nu_[j] / nrm;
        ++cc;
      }
      rb.u(j * 2, j) = 1.0 / nrm;
      rb.u(j * 2 + 1, j) = nu_[j] / nrm;
    }
    return rb;
  }

 private:
  LatticeGeometry geo_;
  ExcitedSites exc_;
  KleinGordonParams par_;
  NeighborTable nbrs_;
  std::vector<double> nu_;

  template <class T, class Mk>
  void site_field(int j, const T* in, T* out, Mk mk) const {
    const T* b = in + static_cast<size_t>(j) * 2;
    T* o = out + static_cast<size_t>(j) * 2;
    o[0] = b[1];
    o[1] = b[0] * (nu_[j] * nu_[j]) - b[0] * b[0] * b[0] * par_.beta;
    if (par_.epsilon != 0.0) {
      T f = mk(0.0);
      for (const auto& [m, w] : nbrs_.at[j]) {
        T qm = m < 0 ? mk(0.0) : in[static_cast<size_t>(m) * 2];
        f += sin2pi(b[0] - qm) * (w / (2.0 * M_PI));
      }
      o[1] -= f * par_.epsilon;
    }
  }
};

// ---------------------------------------------------------------------------
// Classical order-4 one-step integration (states, variational flow, jets)
// ---------------------------------------------------------------------------

namespace detail {
inline int flow_steps(double t, double h) {
  int n = static_cast<int>(std::ceil(std::abs(t) / h - 1e-12));
  return std::max(n, 1);
}
}  // namespace detail

inline State integrate_flow(const VectorField& field, State x, double t, double h,
                            double blowup_bound = 1e3) {
  if (t == 0.0) return x;
  const int n = detail::flow_steps(t, h);
  const double dt = t / n;
  const size_t m = x.size();
  State k1, k2, k3, k4, tmp(m);
  for (int step = 0; step < n; ++step) {
    k1 = field.eval(x);
    for (size_t q = 0; q < m; ++q) tmp[q] = x[q] + 0.5 * dt * k1[q];
    k2 = field.eval(tmp);
    for (size_t q = 0; q < m; ++q) tmp[q] = x[q] + 0.5 * dt * k2[q];
    k3 = field.eval(tmp);
    for (size_t q = 0; q < m; ++q) tmp[q] = x[q] + dt * k3[q];
    k4 = field.eval(tmp);
    for (size_t q = 0; q < m; ++q)
      x[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
    if (sup_abs(x) > blowup_bound) throw BlowUp("flow left the integration domain");
  }
  return x;
}

/// Joint state + variational integration; returns (S_t(x), DS_t(x)).
inline std::pair<State, Eigen::MatrixXd> integrate_flow_variational(const VectorField& field,
                                                                    State x, double t, double h,
                                                                    double blowup_bound = 1e3) {
  const int dim = static_cast<int>(x.size());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(dim, dim);
  if (t == 0.0) return {x, v};
  const int n = detail::flow_steps(t, h);
  const double dt = t / n;
  for (int step = 0; step < n; ++step) {
    auto fx = [&](const State& s) { return field.eval(s); };
    auto dfx = [&](const State& s) { return field.differential(s).to_dense(); };
    State k1 = fx(x);
    Eigen::MatrixXd m1 = dfx(x) * v;
    State x2(x.size());
    for (size_t q = 0; q < x.size(); ++q) x2[q] = x[q] + 0.5 * dt * k1[q];
    State k2 = fx(x2);
    Eigen::MatrixXd m2 = dfx(x2) * (v + 0.5 * dt * m1);
    State x3(x.size());
    for (size_t q = 0; q < x.size(); ++q) x3[q] = x[q] + 0.5 * dt * k2[q];
    State k3 = fx(x3);
    Eigen::MatrixXd m3 = dfx(x3) * (v + 0.5 * dt * m2);
    State x4(x.size());
    for (size_t q = 0; q < x.size(); ++q) x4[q] = x[q] + dt * k3[q];
    State k4 = fx(x4);
    Eigen::MatrixXd m4 = dfx(x4) * (v + dt * m3);
    for (size_t q = 0; q < x.size(); ++q)
      x[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
    v += dt / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
    if (sup_abs(x) > blowup_bound) throw BlowUp("flow left the integration domain");
  }
  return {x, v};
}

/// Transport a full jet (constants included) by the flow.
inline std::vector<Jet> integrate_flow_jets(const VectorField& field, std::vector<Jet> jets,
                                            double t, double h) {
  if (t == 0.0) return jets;
  const int n = detail::flow_steps(t, h);
  const double dt = t / n;
  const size_t m = jets.size();
  auto eval_jets = [&](const std::vector<Jet>& j) {
    State base(m);
    std::vector<Jet> delta = j;
    for (size_t q = 0; q < m; ++q) {
      base[q] = j[q].value();
      delta[q].c[0] = 0.0;
    }
    return field.expand_jet(base, delta);
  };
  for (int step = 0; step < n; ++step) {
    std::vector<Jet> k1 = eval_jets(jets);
    std::vector<Jet> tmp = jets;
    for (size_t q = 0; q < m; ++q) tmp[q] += k1[q] * (0.5 * dt);
    std::vector<Jet> k2 = eval_jets(tmp);
    tmp = jets;
    for (size_t q = 0; q < m; ++q) tmp[q] += k2[q] * (0.5 * dt);
    std::vector<Jet> k3 = eval_jets(tmp);
    tmp = jets;
    for (size_t q = 0; q < m; ++q) tmp[q] += k3[q] * dt;
    std::vector<Jet> k4 = eval_jets(tmp);
    for (size_t q = 0; q < m; ++q)
      jets[q] += (k1[q] + k2[q] * 2.0 + k3[q] * 2.0 + k4[q]) * (dt / 6.0);
  }
  return jets;
}

/// Time-t map of a lattice flow, exposed through the map interface.
class TimeTMap : public MapModel {
 public:
  TimeTMap(std::shared_ptr<const VectorField> field, double t, double h)
      : field_(std::move(field)), t_(t), h_(h) {}

  const LatticeGeometry& geometry() const override { return field_->geometry(); }
  const ExcitedSites& excited() const override { return field_->excited(); }
  std::vector<double> angle_frequencies() const override { return {}; }
  double time() const { return t_; }
  const VectorField& field() const { return *field_; }

  State eval(const State& x) const override { return integrate_flow(*field_, x, t_, h_); }

  DecayOperator differential(const State& x) const override {
    auto [y, v] = integrate_flow_variational(*field_, x, t_, h_);
    (void)y;
    return DecayOperator::from_dense(geometry(), v, 1e-300);
  }

  std::vector<Jet> expand_jet(const State& base, const std::vector<Jet>& delta) const override {
    std::vector<Jet> jets = delta;
    for (size_t q = 0; q < jets.size(); ++q) jets[q].c[0] += base[q];
    return integrate_flow_jets(*field_, std::move(jets), t_, h_);
  }

  RefBases reference_bases() const override { return field_->reference_bases(); }

 private:
  std::shared_ptr<const VectorField> field_;
  double t_;
  double h_;
};

/// Measured coupling-decay certificate: sup over sampled states and site
/// pairs of |DF_ij| / Gamma(i-j).
inline double coupling_decay_constant(const MapModel& model, const DecayFunction& gamma,
                                      int n_states, double ball, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-ball, ball);
  const auto& g = model.geometry();
  double worst = 0.0;
  for (int s = 0; s < n_states; ++s) {
    State x(g.state_dim());
    for (double& v : x) v = u(rng);
    DecayOperator d = model.differential(x);
    worst = std::max(worst, operator_norm_gamma(d, gamma));
  }
  return worst;
}

}  // namespace wl
