#pragma once

#include "wl/flow_manifold.hpp"
#include "wl/serialize.hpp"
#include "wl/verify.hpp"

namespace wl {

enum class ModelKind { rotor_saddle, coupled_standard, klein_gordon };
enum class CertificateMode { rates, spectral };

/// One run's complete configuration.  Every physical parameter is explicit;
/// epsilon and the saddle multiplier in particular carry no defaults.
struct RunConfig {
  ModelKind model = ModelKind::rotor_saddle;
  LatticeGeometry geometry;
  ExcitedSites excited;
  std::vector<double> omega;

  // decay function
  double gamma_alpha = 1.0;
  double gamma_p = 2.0;

  // coupling profile
  CouplingProfile coupling;
  double epsilon = 0.0;

  // rotor-saddle
  double lambda = 0.0;
  double g = 0.0;
  double h = 0.0;
  double alpha_rot = 0.41421356237309515;

  // coupled standard map
  double kstd = 0.0;

  // klein-gordon flow
  double nu0 = 0.0;
  double nu = 0.0;
  double beta = 0.0;
  double t0 = 1.0;
  double step_h = 1e-3;
  std::vector<double> t_check = {0.3, 1.7};

  // cutoffs
  int n_theta = 32;
  int L = 5;
  int L_max = 10;
  double rho = 0.05;

  PStyle style = PStyle::polynomial;
  TailMode tail_mode = TailMode::taylor_extend;
  CertificateMode certificate = CertificateMode::rates;

  TorusSolveOptions torus_opt;
  ManifoldOptions manifold_opt;
  VerifyOptions verify_opt;
  double coupling_c = 0.0;  // measured-coupling certificate bound; 0 = derive from the uncoupled map

  std::uint64_t seed = 1ull;
  std::string out_dir = "run_out";

  std::string raw;  // canonical serialized form used for digests
};

namespace detail {

inline double require_number(const ordered_json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ConfigError("config key '" + key + "' is required and must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

inline RunConfig parse_config(const ordered_json& j) {
  RunConfig cfg;
  cfg.raw = j.dump();

  std::string model = j.value("model", "");
  if (model == "rotor_saddle")
    cfg.model = ModelKind::rotor_saddle;
  else if (model == "coupled_standard")
    cfg.model = ModelKind::coupled_standard;
  else if (model == "klein_gordon")
    cfg.model = ModelKind::klein_gordon;
  else
    throw ConfigError("model must be rotor_saddle|coupled_standard|klein_gordon");

  cfg.geometry.dim_n = static_cast<int>(detail::require_number(j, "N"));
  cfg.geometry.box_radius = static_cast<int>(detail::require_number(j, "R"));
  std::string boundary = j.value("boundary", "frozen");
  if (boundary != "frozen" && boundary != "periodic")
    throw ConfigError("boundary must be frozen|periodic");
  cfg.geometry.boundary = boundary == "frozen" ? Boundary::frozen : Boundary::periodic;
  switch (cfg.model) {
    case ModelKind::rotor_saddle:
      cfg.geometry.torus_dirs = 1;
      cfg.geometry.real_dirs = 2;
      break;
    case ModelKind::coupled_standard:
      cfg.geometry.torus_dirs = 1;
      cfg.geometry.real_dirs = 1;
      break;
    case ModelKind::klein_gordon:
      cfg.geometry.torus_dirs = 0;
      cfg.geometry.real_dirs = 2;
      break;
  }
  cfg.geometry.validate();

  if (!j.contains("excited_sites") || !j.at("excited_sites").is_array())
    throw ConfigError("excited_sites must be an array of site tuples");
  for (const auto& site : j.at("excited_sites")) {
    SiteCoords c{};
    if (!site.is_array() || static_cast<int>(site.size()) != cfg.geometry.dim_n)
      throw ConfigError("each excited site must be a tuple of N integers");
    for (int q = 0; q < cfg.geometry.dim_n; ++q) c[q] = site[q].get<int>();
    if (!cfg.geometry.in_box(c)) throw ConfigError("excited site outside the truncation box");
    cfg.excited.sites.push_back(cfg.geometry.flat(c));
  }
  cfg.excited.validate(cfg.geometry);

  if (j.contains("omega"))
    for (const auto& w : j.at("omega")) cfg.omega.push_back(w.get<double>());

  cfg.epsilon = detail::require_number(j, "epsilon");
  const ordered_json& gamma = j.contains("gamma") ? j.at("gamma") : ordered_json::object();
  cfg.gamma_alpha = gamma.value("alpha", 1.0);
  cfg.gamma_p = gamma.value("p", 2.0);

  const ordered_json& cpl = j.contains("coupling") ? j.at("coupling") : ordered_json::object();
  cfg.coupling.cv = cpl.value("cv", 1.0);
  cfg.coupling.alpha = cpl.value("alpha", cfg.gamma_alpha);
  cfg.coupling.p = cpl.value("p", cfg.gamma_p);
  cfg.coupling.range = cpl.value("range", 2 * cfg.geometry.box_radius);

  switch (cfg.model) {
    case ModelKind::rotor_saddle:
      cfg.lambda = detail::require_number(j, "lambda");
      cfg.g = j.value("g", 0.0);
      cfg.h = j.value("h", 0.0);
      cfg.alpha_rot = j.value("alpha_rot", 0.41421356237309515);
      if (cfg.omega.size() != cfg.excited.sites.size())
        throw ConfigError("rotor_saddle needs one omega per excited site");
      break;
    case ModelKind::coupled_standard:
      cfg.kstd = detail::require_number(j, "kstd");
      break;
    case ModelKind::klein_gordon: {
      const ordered_json& kg = j.contains("klein_gordon") ? j.at("klein_gordon") : j;
      cfg.nu0 = detail::require_number(kg, "nu0");
      cfg.nu = detail::require_number(kg, "nu");
      cfg.beta = detail::require_number(kg, "beta");
      cfg.t0 = kg.value("t0", 1.0);
      cfg.step_h = kg.value("h", 1e-3);
      if (kg.contains("t_check")) {
        cfg.t_check.clear();
        for (const auto& t : kg.at("t_check")) cfg.t_check.push_back(t.get<double>());
      }
      if (!cfg.omega.empty()) throw ConfigError("klein_gordon runs are pinned: omega must be empty");
      break;
    }
  }

  cfg.n_theta = j.value("n_theta", 32);
  cfg.L = j.value("L", 5);
  cfg.L_max = j.value("L_max", 2 * cfg.L);
  cfg.rho = j.value("rho", 0.05);
  if (cfg.L < 1 || cfg.L_max < cfg.L) throw ConfigError("need 1 <= L <= L_max");
  if (cfg.n_theta < 1 && cfg.geometry.torus_dirs > 0 && !cfg.excited.empty())
    throw ConfigError("n_theta must be positive for torus runs");

  std::string style = j.value("style", "polynomial_P");
  if (style == "polynomial_P")
    cfg.style = PStyle::polynomial;
  else if (style == "linear_P")
    cfg.style = PStyle::linear;
  else
    throw ConfigError("style must be polynomial_P|linear_P");

  std::string tail = j.value("tail_mode", "taylor_extend");
  if (tail == "taylor_extend")
    cfg.tail_mode = TailMode::taylor_extend;
  else if (tail == "contraction")
    cfg.tail_mode = TailMode::contraction;
  else
    throw ConfigError("tail_mode must be taylor_extend|contraction");

  std::string certmode = j.value("certificate", cfg.model == ModelKind::klein_gordon ? "spectral" : "rates");
  if (certmode == "rates")
    cfg.certificate = CertificateMode::rates;
  else if (certmode == "spectral")
    cfg.certificate = CertificateMode::spectral;
  else
    throw ConfigError("certificate must be rates|spectral");

  const ordered_json& tol = j.contains("tolerances") ? j.at("tolerances") : ordered_json::object();
  cfg.torus_opt.tol = tol.value("tol_torus", 1e-12);
  cfg.torus_opt.divisor_floor = tol.value("divisor_floor", 1e-6);
  cfg.torus_opt.split.tol_split = tol.value("tol_split", 1e-9);
  cfg.manifold_opt.L = cfg.L;
  cfg.manifold_opt.Lmax = cfg.L_max;
  cfg.manifold_opt.style = cfg.style;
  cfg.manifold_opt.tol_order = tol.value("tol_order", 1e-10);
  cfg.manifold_opt.tol_tail = tol.value("tol_tail", 1e-12);
  cfg.manifold_opt.delta = tol.value("delta", 0.0);
  cfg.verify_opt.tol_total = tol.value("tol_total", 1e-8);
  cfg.verify_opt.slope_tol = tol.value("slope_tol", 0.2);
  cfg.verify_opt.slope_lo = tol.value("slope_lo", 1e-4);
  cfg.verify_opt.slope_hi = tol.value("slope_hi", 1e-2);
  cfg.verify_opt.rate_tol = tol.value("rate_tol", 0.05);
  cfg.verify_opt.n_orbit = static_cast<int>(tol.value("n_orbit", 20.0));
  cfg.coupling_c = tol.value("coupling_c", 0.0);

  cfg.seed = j.value("seed", 1ull);
  cfg.verify_opt.seed = cfg.seed;
  cfg.out_dir = j.value("out_dir", "run_out");
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json(path));
}

/// The lattice map the run works with (the klein_gordon flow is wrapped in
/// its time-t0 map downstream, not here).
inline std::shared_ptr<MapModel> build_map_model(const RunConfig& cfg) {
  switch (cfg.model) {
    case ModelKind::rotor_saddle: {
      RotorSaddleParams p;
      p.lambda = cfg.lambda;
      p.g = cfg.g;
      p.h = cfg.h;
      p.alpha_rot = cfg.alpha_rot;
      p.omega = cfg.omega;
      p.epsilon = cfg.epsilon;
      p.coupling = cfg.coupling;
      return std::make_shared<RotorSaddleMap>(cfg.geometry, cfg.excited, p);
    }
    case ModelKind::coupled_standard: {
      CoupledStandardParams p;
      p.kstd = cfg.kstd;
      p.epsilon = cfg.epsilon;
      p.coupling = cfg.coupling;
      return std::make_shared<CoupledStandardMap>(cfg.geometry, cfg.excited, p);
    }
    case ModelKind::klein_gordon:
      throw ConfigError("klein_gordon is a flow model; build the field instead");
  }
  throw ConfigError("unknown model");
}

inline std::shared_ptr<KleinGordonField> build_field(const RunConfig& cfg) {
  KleinGordonParams p;
  p.nu0 = cfg.nu0;
  p.nu = cfg.nu;
  p.beta = cfg.beta;
  p.epsilon = cfg.epsilon;
  p.coupling = cfg.coupling;
  return std::make_shared<KleinGordonField>(cfg.geometry, cfg.excited, p);
}

}  // namespace wl
