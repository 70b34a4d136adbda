#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "wl/common.hpp"

namespace wl {

/// Uniform collocation grid on the D-torus with 2*Ntheta+1 nodes per angle,
/// tied to the symmetric Fourier mode box m in [-Ntheta, Ntheta]^D.  All
/// angle shifts theta -> theta + omega go through the mode representation
/// (phase multiplication), which is exact for retained modes.  D = 0 is the
/// fixed-point degeneration: one node, one mode, every transform trivial.
struct AngleGrid {
  int D = 0;
  int n_theta = 0;

  int per_axis() const { return 2 * n_theta + 1; }
  int total() const {
    int t = 1;
    for (int k = 0; k < D; ++k) t *= per_axis();
    return t;
  }

  AngleGrid() = default;
  AngleGrid(int dim, int ntheta) : D(dim), n_theta(ntheta) { build(); }

  std::vector<double> node_theta(int t) const {
    std::vector<double> th(D);
    const int n = per_axis();
    for (int k = D - 1; k >= 0; --k) {
      th[k] = static_cast<double>(t % n) / n;
      t /= n;
    }
    return th;
  }

  /// Mode vector (components in [-Ntheta, Ntheta]) of flat mode index.
  std::vector<int> mode_vec(int m) const {
    std::vector<int> mv(D);
    const int n = per_axis();
    for (int k = D - 1; k >= 0; --k) {
      mv[k] = m % n - n_theta;
      m /= n;
    }
    return mv;
  }

  int mode_abs_sum(int m) const {
    int s = 0;
    for (int v : mode_vec(m)) s += std::abs(v);
    return s;
  }

  Eigen::VectorXcd to_modes(const Eigen::VectorXd& grid_vals) const {
    Eigen::VectorXcd v = grid_vals.cast<std::complex<double>>();
    return transform(v, fwd_);
  }

  Eigen::VectorXd to_grid(const Eigen::VectorXcd& modes) const {
    Eigen::VectorXcd v = transform(modes, bwd_);
    return v.real();
  }

  /// Per-mode phases e^{2*pi*i m.omega}.
  Eigen::VectorXcd shift_phases(const std::vector<double>& omega) const {
    Eigen::VectorXcd ph(total());
    for (int m = 0; m < total(); ++m) {
      double arg = 0.0;
      std::vector<int> mv = mode_vec(m);
      for (int k = 0; k < D; ++k) arg += mv[k] * omega[k];
      ph[m] = std::polar(1.0, 2.0 * M_PI * arg);
    }
    return ph;
  }

  /// Grid values of f(theta + omega) from grid values of f.
  Eigen::VectorXd shifted_grid(const Eigen::VectorXd& grid_vals,
                               const Eigen::VectorXcd& phases) const {
    if (D == 0) return grid_vals;
    Eigen::VectorXcd m = to_modes(grid_vals);
    m.array() *= phases.array();
    return to_grid(m);
  }

  double eval_modes(const Eigen::VectorXcd& modes, const std::vector<double>& theta) const {
    std::complex<double> acc = 0.0;
    for (int m = 0; m < total(); ++m) {
      double arg = 0.0;
      std::vector<int> mv = mode_vec(m);
      for (int k = 0; k < D; ++k) arg += mv[k] * theta[k];
      acc += modes[m] * std::polar(1.0, 2.0 * M_PI * arg);
    }
    return acc.real();
  }

  double eval_grid_fn(const Eigen::VectorXd& grid_vals, const std::vector<double>& theta) const {
    if (D == 0) return grid_vals[0];
    return eval_modes(to_modes(grid_vals), theta);
  }

  /// l1-weighted analytic norm sum_m |f_m| e^{2*pi*rho*|m|_1}; upper-bounds the
  /// sup of f on the strip of width rho.
  double analytic_norm(const Eigen::VectorXcd& modes, double rho) const {
    double s = 0.0;
    for (int m = 0; m < total(); ++m) s += std::abs(modes[m]) * std::exp(2.0 * M_PI * rho * mode_abs_sum(m));
    return s;
  }

 private:
  Eigen::MatrixXcd fwd_;  // per-axis analysis matrix
  Eigen::MatrixXcd bwd_;  // per-axis synthesis matrix

  void build() {
    const int n = per_axis();
    fwd_.resize(n, n);
    bwd_.resize(n, n);
    for (int m = 0; m < n; ++m)
      for (int t = 0; t < n; ++t) {
        double arg = 2.0 * M_PI * (m - n_theta) * t / static_cast<double>(n);
        bwd_(t, m) = std::polar(1.0, arg);
        fwd_(m, t) = std::polar(1.0 / n, -arg);
      }
  }

  // Apply the per-axis matrix along every axis of the flattened tensor.
  Eigen::VectorXcd transform(const Eigen::VectorXcd& v, const Eigen::MatrixXcd& mat) const {
    if (D == 0) return v;
    const int n = per_axis();
    Eigen::VectorXcd cur = v;
    int inner = total() / n;  // axis 0 is slowest
    for (int axis = 0; axis < D; ++axis) {
      Eigen::VectorXcd next(total());
      int outer = total() / (n * inner);
      for (int u = 0; u < outer; ++u)
        for (int w = 0; w < inner; ++w) {
          Eigen::VectorXcd slice(n);
          for (int q = 0; q < n; ++q) slice[q] = cur[(u * n + q) * inner + w];
          Eigen::VectorXcd out = mat * slice;
          for (int q = 0; q < n; ++q) next[(u * n + q) * inner + w] = out[q];
        }
      cur.swap(next);
      inner /= n;
      if (inner == 0) inner = 1;
    }
    return cur;
  }
};

}  // namespace wl
