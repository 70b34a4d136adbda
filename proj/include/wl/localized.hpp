#pragma once

#include <Eigen/Dense>
#include <map>
#include <utility>
#include <vector>

#include "wl/decay.hpp"

namespace wl {

inline double inf_norm(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Per-site block vector over the truncated lattice.
struct LocalizedVector {
  LatticeGeometry geometry;
  std::vector<double> blocks;  // site-major, block_dim entries per site

  LocalizedVector() = default;
  explicit LocalizedVector(const LatticeGeometry& g)
      : geometry(g), blocks(static_cast<size_t>(g.state_dim()), 0.0) {}

  double* block(int site) { return blocks.data() + static_cast<size_t>(site) * geometry.block_dim(); }
  const double* block(int site) const {
    return blocks.data() + static_cast<size_t>(site) * geometry.block_dim();
  }

  double block_norm(int site) const {
    double m = 0.0;
    const double* b = block(site);
    for (int q = 0; q < geometry.block_dim(); ++q) m = std::max(m, std::abs(b[q]));
    return m;
  }

  double sup_norm() const {
    double m = 0.0;
    for (double x : blocks) m = std::max(m, std::abs(x));
    return m;
  }
};

/// ||v||_{c,Gamma} = sup_i inf_k |v_i| Gamma^{-1}(i - c_k).
inline double localized_vector_norm(const LocalizedVector& v, const ExcitedSites& c,
                                    const DecayFunction& gamma) {
  if (c.empty()) throw EmptyExcitedSet("localized norm needs a nonempty excited set");
  double sup = 0.0;
  for (int i = 0; i < v.geometry.sites(); ++i) {
    double bn = v.block_norm(i);
    if (bn == 0.0) continue;
    double inf = std::numeric_limits<double>::infinity();
    for (int ck : c.sites) inf = std::min(inf, bn / gamma.gamma_pair(i, ck));
    sup = std::max(sup, inf);
  }
  return sup;
}

/// Linear operator given by per-pair matrix blocks A_{ij}, stored sparsely;
/// entries whose decay budget Gamma(i-j) falls below drop_tol are omitted.
struct DecayOperator {
  LatticeGeometry geometry;
  double drop_tol = 0.0;
  std::map<std::pair<int, int>, Eigen::MatrixXd> entries;

  DecayOperator() = default;
  explicit DecayOperator(const LatticeGeometry& g, double drop = 0.0) : geometry(g), drop_tol(drop) {}

  int bd() const { return geometry.block_dim(); }

  Eigen::MatrixXd& block(int i, int j) {
    auto it = entries.find({i, j});
    if (it == entries.end())
      it = entries.emplace(std::make_pair(i, j), Eigen::MatrixXd::Zero(bd(), bd())).first;
    return it->second;
  }

  const Eigen::MatrixXd* find(int i, int j) const {
    auto it = entries.find({i, j});
    return it == entries.end() ? nullptr : &it->second;
  }

  static DecayOperator identity(const LatticeGeometry& g) {
    DecayOperator a(g);
    for (int i = 0; i < g.sites(); ++i) a.block(i, i) = Eigen::MatrixXd::Identity(g.block_dim(), g.block_dim());
    return a;
  }

  LocalizedVector apply(const LocalizedVector& v) const {
    LocalizedVector out(geometry);
    Eigen::Map<Eigen::VectorXd> ov(out.blocks.data(), out.blocks.size());
    for (const auto& [key, m] : entries) {
      Eigen::Map<const Eigen::VectorXd> vj(v.block(key.second), bd());
      ov.segment(static_cast<Eigen::Index>(key.first) * bd(), bd()) += m * vj;
    }
    return out;
  }

  Eigen::MatrixXd to_dense() const {
    const int n = geometry.state_dim();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [key, m] : entries)
      d.block(key.first * bd(), key.second * bd(), bd(), bd()) = m;
    return d;
  }

  static DecayOperator from_dense(const LatticeGeometry& g, const Eigen::MatrixXd& d,
                                  double drop_entry_below = 0.0) {
    DecayOperator a(g);
    const int bd = g.block_dim();
    for (int i = 0; i < g.sites(); ++i)
      for (int j = 0; j < g.sites(); ++j) {
        Eigen::MatrixXd m = d.block(i * bd, j * bd, bd, bd);
        if (inf_norm(m) > drop_entry_below) a.entries.emplace(std::make_pair(i, j), std::move(m));
      }
    return a;
  }
};

/// ||A||_Gamma = sup_{i,j} Gamma(i-j)^{-1} |A_{ij}|.
inline double operator_norm_gamma(const DecayOperator& a, const DecayFunction& gamma) {
  double sup = 0.0;
  for (const auto& [key, m] : a.entries)
    sup = std::max(sup, inf_norm(m) / gamma.gamma_pair(key.first, key.second));
  return sup;
}

/// ||A||_{c,Gamma}: the larger of the plain decay constant and the
/// localization constant sup_{i,j} inf_k |A_{ij}| Gamma^{-1}(i - c_k).
inline double operator_norm_localized(const DecayOperator& a, const DecayFunction& gamma,
                                      const ExcitedSites& c) {
  if (c.empty()) throw EmptyExcitedSet("localized operator norm needs excited sites");
  double sup_loc = 0.0;
  for (const auto& [key, m] : a.entries) {
    double bn = inf_norm(m);
    if (bn == 0.0) continue;
    double inf = std::numeric_limits<double>::infinity();
    for (int ck : c.sites) inf = std::min(inf, bn / gamma.gamma_pair(key.first, ck));
    sup_loc = std::max(sup_loc, inf);
  }
  return std::max(operator_norm_gamma(a, gamma), sup_loc);
}

inline DecayOperator compose(const DecayOperator& a, const DecayOperator& b,
                             const DecayFunction* gamma = nullptr) {
  if (!(a.geometry == b.geometry)) throw OrderMismatch("compose: geometry mismatch");
  DecayOperator out(a.geometry, std::max(a.drop_tol, b.drop_tol));
  for (const auto& [ka, ma] : a.entries)
    for (const auto& [kb, mb] : b.entries) {
      if (ka.second != kb.first) continue;
      out.block(ka.first, kb.second) += ma * mb;
    }
  if (out.drop_tol > 0.0 && gamma) {
    for (auto it = out.entries.begin(); it != out.entries.end();)
      if (gamma->gamma_pair(it->first.first, it->first.second) < out.drop_tol)
        it = out.entries.erase(it);
      else
        ++it;
  }
  return out;
}

/// k-multilinear map B_{i, i1..ik} with blocks acting on k site-blocks.
/// Each block is stored flattened as (bd) x (bd^k): output component index by
/// row, tensor-product input index (i1-block fastest-last) by column.
struct MultilinearDecayOperator {
  LatticeGeometry geometry;
  int order = 1;
  std::map<std::vector<int>, Eigen::MatrixXd> entries;  // key = {i, i1, .., ik}

  MultilinearDecayOperator() = default;
  MultilinearDecayOperator(const LatticeGeometry& g, int k) : geometry(g), order(k) {}

  int bd() const { return geometry.block_dim(); }
  int cols() const {
    int c = 1;
    for (int t = 0; t < order; ++t) c *= bd();
    return c;
  }

  Eigen::MatrixXd& block(const std::vector<int>& key) {
    auto it = entries.find(key);
    if (it == entries.end()) it = entries.emplace(key, Eigen::MatrixXd::Zero(bd(), cols())).first;
    return it->second;
  }

  /// Apply to k block vectors.
  LocalizedVector apply(const std::vector<const LocalizedVector*>& args) const {
    if (static_cast<int>(args.size()) != order) throw OrderMismatch("multilinear apply arity");
    LocalizedVector out(geometry);
    const int b = bd();
    for (const auto& [key, m] : entries) {
      // tensor product of the argument blocks at sites key[1..k]
      Eigen::VectorXd t = Eigen::VectorXd::Ones(1);
      for (int q = 0; q < order; ++q) {
        Eigen::Map<const Eigen::VectorXd> xq(args[q]->block(key[q + 1]), b);
        Eigen::VectorXd nt(t.size() * b);
        for (Eigen::Index u = 0; u < t.size(); ++u) nt.segment(u * b, b) = t[u] * xq;
        t.swap(nt);
      }
      Eigen::Map<Eigen::VectorXd>(out.block(key[0]), b) += m * t;
    }
    return out;
  }
};

inline double multilinear_norm_gamma(const MultilinearDecayOperator& bop,
                                     const DecayFunction& gamma) {
  double sup = 0.0;
  for (const auto& [key, m] : bop.entries) {
    double bn = inf_norm(m);
    for (int q = 1; q <= bop.order; ++q)
      sup = std::max(sup, bn / gamma.gamma_pair(key[0], key[q]));
  }
  return sup;
}

inline double multilinear_norm_localized(const MultilinearDecayOperator& bop,
                                         const DecayFunction& gamma, const ExcitedSites& c) {
  if (c.empty()) throw EmptyExcitedSet("localized multilinear norm needs excited sites");
  double sup = multilinear_norm_gamma(bop, gamma);
  for (const auto& [key, m] : bop.entries) {
    double bn = inf_norm(m);
    if (bn == 0.0) continue;
    double inf = std::numeric_limits<double>::infinity();
    for (int ck : c.sites) inf = std::min(inf, bn / gamma.gamma_pair(key[0], ck));
    sup = std::max(sup, inf);
  }
  return sup;
}

/// Contraction A(B1 v1, ..., Bk vk) of a k-multilinear A with linear maps B_t.
inline MultilinearDecayOperator contract(const MultilinearDecayOperator& a,
                                         const std::vector<const DecayOperator*>& bs) {
  if (static_cast<int>(bs.size()) != a.order)
    throw OrderMismatch("contract: arity does not match multilinear order");
  for (const auto* b : bs)
    if (!(b->geometry == a.geometry)) throw OrderMismatch("contract: geometry mismatch");

  const int bd = a.bd();
  MultilinearDecayOperator out(a.geometry, a.order);
  // Transform one input leg at a time: leg t picks up B_t acting from the right.
  std::map<std::vector<int>, Eigen::MatrixXd> cur = a.entries;
  for (int t = 0; t < a.order; ++t) {
    std::map<std::vector<int>, Eigen::MatrixXd> next;
    // stride of leg t within the flattened column index (leg k-1 is fastest)
    int stride = 1;
    for (int q = t + 1; q < a.order; ++q) stride *= bd;
    int outer = 1;
    for (int q = 0; q < t; ++q) outer *= bd;
    const int inner = stride / 1;
    for (const auto& [key, m] : cur) {
      for (const auto& [kb, mb] : bs[t]->entries) {
        if (kb.first != key[t + 1]) continue;
        std::vector<int> nk = key;
        nk[t + 1] = kb.second;
        auto it = next.find(nk);
        if (it == next.end())
          it = next.emplace(nk, Eigen::MatrixXd::Zero(m.rows(), m.cols())).first;
        // columns factor as (outer, bd@leg t, inner); contract the middle index
        for (int u = 0; u < outer; ++u)
          for (int v = 0; v < bd; ++v)
            for (int w = 0; w < bd; ++w)
              it->second.middleCols((u * bd + v) * inner, inner) +=
                  mb(w, v) * m.middleCols((u * bd + w) * inner, inner);
      }
    }
    cur.swap(next);
  }
  out.entries = std::move(cur);
  (void)out.cols();
  return out;
}

}  // namespace wl
