#pragma once

#include "wl/manifold.hpp"

namespace wl {

struct FlowManifoldOptions {
  double t0 = 1.0;
  double h = 1e-3;
  std::vector<double> t_check = {0.3, 1.7};
  int n_theta = 0;
  ManifoldOptions manifold;
  TorusSolveOptions torus;
  int n_s_samples = 7;
  double s_ball = 0.01;
};

struct FlowTimeSlice {
  double t = 0.0;
  BundlePolynomial P;
  double cu_defect = 0.0;
  double invariance_defect = 0.0;  // sup_s |S_t(W(s)) - W(theta + t omega, P_t(s))|
};

struct FlowManifoldResult {
  std::shared_ptr<TimeTMap> map;  // S_{t0}
  TorusSolveResult torus;
  ManifoldPair pair;
  double field_identity_defect = 0.0;  // sup |X o K - DK . omega|
  std::vector<FlowTimeSlice> slices;
};

/// Manifold of a whiskered torus of a lattice flow: certify X o K = DK.omega,
/// build (W, P~) through the time-t0 map, then recover P(t) for each
/// requested t by conjugacy matching of the transported jets.
inline FlowManifoldResult solve_flow_manifold(std::shared_ptr<const VectorField> field,
                                              const FlowManifoldOptions& opt) {
  FlowManifoldResult out;
  out.map = std::make_shared<TimeTMap>(field, opt.t0, opt.h);

  TorusEmbedding k0 = reference_torus(*out.map, opt.n_theta);
  out.torus = solve_invariant_torus(*out.map, out.map->angle_frequencies(), k0, opt.torus);
  const TorusEmbedding& K = out.torus.K;
  const Splitting& sp = out.torus.split;

  {
    Eigen::MatrixXd dk = directional_derivative(K, K.omega);
    double d = 0.0;
    for (int t = 0; t < K.grid.total(); ++t) {
      State x = field->eval(K.state_at_node(t));
      for (int k = 0; k < K.geometry.state_dim(); ++k) d = std::max(d, std::abs(x[k] - dk(k, t)));
    }
    out.field_identity_defect = d;
  }

  ManifoldSolver solver(*out.map, K, sp, opt.manifold);
  out.pair = solver.solve(TailMode::taylor_extend);

  const AngleGrid& grid = K.grid;
  for (double t : opt.t_check) {
    FlowTimeSlice slice;
    slice.t = t;
    std::vector<double> shift = K.omega;
    for (double& w : shift) w *= t / opt.t0;  // K.omega is the t0-map frequency
    auto lhs = [&](int node) {
      std::vector<Jet> jets = out.pair.W.node_jets(node, out.pair.L);
      State base = K.state_at_node(node);
      for (size_t q = 0; q < jets.size(); ++q) jets[q].c[0] += base[q];
      return integrate_flow_jets(*field, std::move(jets), t, opt.h);
    };
    ConjugacyMatch m = match_conjugacy(out.pair, sp, shift, lhs);
    slice.P = m.R;
    slice.cu_defect = m.cu_defect;

    // pointwise invariance of the manifold under S_t at sampled (theta, s)
    Eigen::VectorXcd ph = grid.shift_phases(shift);
    std::vector<Eigen::MatrixXd> wsh = out.pair.W.shifted_coef(ph);
    std::vector<State> base_sh = K.states_shifted(shift);
    double defect = 0.0;
    for (int node = 0; node < grid.total(); node += std::max(1, grid.total() / 8)) {
      for (int ks = 0; ks < opt.n_s_samples; ++ks) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(sp.ds);
        for (int q = 0; q < sp.ds; ++q)
          s[q] = opt.s_ball * std::cos(2.0 * M_PI * (ks + 1.0) / (opt.n_s_samples + 1.0) + q);
        State x = out.pair.W.eval_node(node, s);
        State sx = integrate_flow(*field, x, t, opt.h);
        Eigen::VectorXd ps = slice.P.eval_node(node, s);
        Eigen::VectorXd mono = out.pair.W.monomials(ps);
        for (int c = 0; c < K.geometry.state_dim(); ++c) {
          double w = base_sh[node][c];
          for (int slot = 1; slot < out.pair.W.spec->count(); ++slot)
            w += wsh[slot](c, node) * mono[slot];
          defect = std::max(defect, std::abs(sx[c] - w));
        }
      }
    }
    slice.invariance_defect = defect;
    out.slices.push_back(slice);
  }
  return out;
}

}  // namespace wl
