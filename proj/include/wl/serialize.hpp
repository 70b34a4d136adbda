#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "wl/manifold.hpp"

namespace wl {

using ordered_json = nlohmann::ordered_json;

// All floating-point payload goes through hex-float strings: round trips are
// bit-exact and independent of locale or printf precision defaults.

inline ordered_json hex_array(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(hexfloat(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd parse_hex_array(const ordered_json& j) {
  const auto rows = j.size();
  const auto cols = rows == 0 ? 0 : j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) m(r, c) = parse_hexfloat(j[r][c].get<std::string>());
  return m;
}

inline ordered_json geometry_to_json(const LatticeGeometry& g) {
  return ordered_json{{"N", g.dim_n},
                      {"R", g.box_radius},
                      {"boundary", g.boundary == Boundary::frozen ? "frozen" : "periodic"},
                      {"l", g.torus_dirs},
                      {"d", g.real_dirs}};
}

inline LatticeGeometry geometry_from_json(const ordered_json& j) {
  LatticeGeometry g;
  g.dim_n = j.at("N").get<int>();
  g.box_radius = j.at("R").get<int>();
  std::string b = j.at("boundary").get<std::string>();
  if (b != "frozen" && b != "periodic") throw ConfigError("boundary must be frozen|periodic");
  g.boundary = b == "frozen" ? Boundary::frozen : Boundary::periodic;
  g.torus_dirs = j.at("l").get<int>();
  g.real_dirs = j.at("d").get<int>();
  g.validate();
  return g;
}

inline ordered_json decay_to_json(const DecayFunction& g) {
  ordered_json j;
  j["alpha"] = hexfloat(g.alpha);
  j["p"] = hexfloat(g.p);
  j["a"] = hexfloat(g.a);
  j["N"] = g.geometry.dim_n;
  j["R"] = g.geometry.box_radius;
  j["geometry"] = geometry_to_json(g.geometry);
  return j;
}

inline DecayFunction decay_from_json(const ordered_json& j) {
  DecayFunction g;
  g.alpha = parse_hexfloat(j.at("alpha").get<std::string>());
  g.p = parse_hexfloat(j.at("p").get<std::string>());
  g.a = parse_hexfloat(j.at("a").get<std::string>());
  g.geometry = geometry_from_json(j.at("geometry"));
  return g;
}

inline ordered_json operator_to_json(const DecayOperator& a) {
  ordered_json j;
  j["geometry"] = geometry_to_json(a.geometry);
  j["drop_tol"] = hexfloat(a.drop_tol);
  ordered_json entries = ordered_json::array();
  for (const auto& [key, m] : a.entries) {
    SiteCoords ci = a.geometry.coords(key.first), cj = a.geometry.coords(key.second);
    ordered_json e;
    ordered_json ti = ordered_json::array(), tj = ordered_json::array();
    for (int k = 0; k < a.geometry.dim_n; ++k) {
      ti.push_back(ci[k]);
      tj.push_back(cj[k]);
    }
    e["i"] = ti;
    e["j"] = tj;
    e["block"] = hex_array(m);
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  return j;
}

inline DecayOperator operator_from_json(const ordered_json& j) {
  DecayOperator a(geometry_from_json(j.at("geometry")),
                  parse_hexfloat(j.at("drop_tol").get<std::string>()));
  for (const auto& e : j.at("entries")) {
    SiteCoords ci{}, cj{};
    for (size_t k = 0; k < e.at("i").size(); ++k) ci[k] = e.at("i")[k].get<int>();
    for (size_t k = 0; k < e.at("j").size(); ++k) cj[k] = e.at("j")[k].get<int>();
    a.entries.emplace(std::make_pair(a.geometry.flat(ci), a.geometry.flat(cj)),
                      parse_hex_array(e.at("block")));
  }
  return a;
}

inline ordered_json torus_to_json(const TorusEmbedding& k) {
  ordered_json j;
  j["geometry"] = geometry_to_json(k.geometry);
  ordered_json exc = ordered_json::array();
  for (int s : k.excited.sites) {
    SiteCoords c = k.geometry.coords(s);
    ordered_json t = ordered_json::array();
    for (int q = 0; q < k.geometry.dim_n; ++q) t.push_back(c[q]);
    exc.push_back(std::move(t));
  }
  j["excited_sites"] = std::move(exc);
  j["n_theta"] = k.grid.n_theta;
  ordered_json om = ordered_json::array();
  for (double w : k.omega) om.push_back(hexfloat(w));
  j["omega"] = std::move(om);
  j["rho"] = hexfloat(k.rho);
  ordered_json lin = ordered_json::array();
  for (int v : k.lin) lin.push_back(v);
  j["angle_identity"] = std::move(lin);
  j["values"] = hex_array(k.vals);
  return j;
}

inline TorusEmbedding torus_from_json(const ordered_json& j) {
  TorusEmbedding k;
  k.geometry = geometry_from_json(j.at("geometry"));
  for (const auto& t : j.at("excited_sites")) {
    SiteCoords c{};
    for (size_t q = 0; q < t.size(); ++q) c[q] = t[q].get<int>();
    k.excited.sites.push_back(k.geometry.flat(c));
  }
  for (const auto& w : j.at("omega")) k.omega.push_back(parse_hexfloat(w.get<std::string>()));
  k.grid = AngleGrid(static_cast<int>(k.omega.size()), j.at("n_theta").get<int>());
  k.rho = parse_hexfloat(j.at("rho").get<std::string>());
  for (const auto& v : j.at("angle_identity")) k.lin.push_back(v.get<int>());
  k.vals = parse_hex_array(j.at("values"));
  return k;
}

inline ordered_json pair_to_json(const ManifoldPair& pair) {
  ordered_json j;
  j["torus"] = torus_to_json(pair.W.base);
  j["d_s"] = pair.W.spec->dvars;
  j["L"] = pair.L;
  j["L_max"] = pair.W.spec->max_order;
  j["style"] = pair.style == PStyle::polynomial ? "polynomial_P" : "linear_P";
  j["delta"] = hexfloat(pair.delta);
  ordered_json wc = ordered_json::array();
  ordered_json pc = ordered_json::array();
  for (int slot = 1; slot < pair.W.spec->count(); ++slot) {
    ordered_json key = ordered_json::array();
    for (int q = 0; q < pair.W.spec->dvars; ++q) key.push_back(pair.W.spec->midx[slot][q]);
    wc.push_back(ordered_json{{"s_index", key}, {"coef", hex_array(pair.W.coef[slot])}});
    pc.push_back(ordered_json{{"s_index", key}, {"coef", hex_array(pair.P.coef[slot])}});
  }
  j["W"] = std::move(wc);
  j["P"] = std::move(pc);
  return j;
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(1) << "\n";
}

inline ordered_json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  ordered_json j;
  in >> j;
  return j;
}

/// Long-format CSV writer: one header row, then one record per line.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
      : out_(path) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    for (size_t k = 0; k < columns.size(); ++k) out_ << (k ? "," : "") << columns[k];
    out_ << "\n";
  }

  void row(const std::vector<std::string>& fields) {
    for (size_t k = 0; k < fields.size(); ++k) out_ << (k ? "," : "") << fields[k];
    out_ << "\n";
  }

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

 private:
  std::ofstream out_;
};

}  // namespace wl
