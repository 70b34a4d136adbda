#pragma once

#include <array>
#include <cstdlib>
#include <string>
#include <vector>

#include "wl/common.hpp"

namespace wl {

constexpr int kMaxDim = 4;

using SiteCoords = std::array<int, kMaxDim>;

enum class Boundary { frozen, periodic };

/// Truncated lattice box {-R..R}^N with a per-site phase space T^l x R^d.
/// Sites are addressed by a flat index in row-major order over the box;
/// coordinate differences follow the boundary mode (plain for frozen,
/// minimum-image for periodic).
struct LatticeGeometry {
  int dim_n = 1;
  int box_radius = 1;
  Boundary boundary = Boundary::frozen;
  int torus_dirs = 0;  // l
  int real_dirs = 0;   // d

  int side() const { return 2 * box_radius + 1; }

  int sites() const {
    int s = 1;
    for (int k = 0; k < dim_n; ++k) s *= side();
    return s;
  }

  int block_dim() const { return torus_dirs + real_dirs; }
  int state_dim() const { return sites() * block_dim(); }

  bool in_box(const SiteCoords& c) const {
    for (int k = 0; k < dim_n; ++k)
      if (std::abs(c[k]) > box_radius) return false;
    return true;
  }

  SiteCoords coords(int flat) const {
    SiteCoords c{};
    for (int k = dim_n - 1; k >= 0; --k) {
      c[k] = flat % side() - box_radius;
      flat /= side();
    }
    return c;
  }

  int flat(const SiteCoords& c) const {
    int f = 0;
    for (int k = 0; k < dim_n; ++k) f = f * side() + (c[k] + box_radius);
    return f;
  }

  /// Site displaced by offset, or -1 when it leaves a frozen box.
  int neighbor(int site, const SiteCoords& offset) const {
    SiteCoords c = coords(site);
    for (int k = 0; k < dim_n; ++k) {
      c[k] += offset[k];
      if (boundary == Boundary::periodic) {
        int span = side();
        int v = (c[k] + box_radius) % span;
        if (v < 0) v += span;
        c[k] = v - box_radius;
      }
    }
    if (!in_box(c)) return -1;
    return flat(c);
  }

  /// Coordinate difference i - j used for decay distances.
  SiteCoords diff(int i, int j) const {
    SiteCoords a = coords(i), b = coords(j), d{};
    for (int k = 0; k < dim_n; ++k) {
      d[k] = a[k] - b[k];
      if (boundary == Boundary::periodic) {
        int span = side();
        while (d[k] > span / 2) d[k] -= span;
        while (d[k] < -span / 2) d[k] += span;
      }
    }
    return d;
  }

  int max_norm(const SiteCoords& c) const {
    int m = 0;
    for (int k = 0; k < dim_n; ++k) m = std::max(m, std::abs(c[k]));
    return m;
  }

  int distance(int i, int j) const { return max_norm(diff(i, j)); }

  bool operator==(const LatticeGeometry& o) const {
    return dim_n == o.dim_n && box_radius == o.box_radius && boundary == o.boundary &&
           torus_dirs == o.torus_dirs && real_dirs == o.real_dirs;
  }

  void validate() const {
    if (dim_n < 1 || dim_n > kMaxDim) throw ConfigError("lattice dimension out of range");
    if (box_radius < 0) throw ConfigError("box radius must be >= 0");
    if (torus_dirs < 0 || real_dirs < 0 || block_dim() == 0)
      throw ConfigError("per-site phase dims invalid");
  }
};

/// Ordered collection of excited sites (flat indices, no duplicates).
struct ExcitedSites {
  std::vector<int> sites;

  int count() const { return static_cast<int>(sites.size()); }
  bool empty() const { return sites.empty(); }

  void validate(const LatticeGeometry& g) const {
    for (size_t a = 0; a < sites.size(); ++a) {
      if (sites[a] < 0 || sites[a] >= g.sites()) throw ConfigError("excited site outside box");
      for (size_t b = a + 1; b < sites.size(); ++b)
        if (sites[a] == sites[b]) throw ConfigError("duplicate excited site");
    }
  }

  bool contains(int site) const {
    for (int s : sites)
      if (s == site) return true;
    return false;
  }

  /// Index of site within the excited list, or -1.
  int rank_of(int site) const {
    for (size_t k = 0; k < sites.size(); ++k)
      if (sites[k] == site) return static_cast<int>(k);
    return -1;
  }
};

}  // namespace wl
