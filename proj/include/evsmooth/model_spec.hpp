#pragma once

// Declarative model description and its JSON reader.
//
// Spec document (JSON):
//
//   {
//     "family":   "gev" | "gpd" | "pp" | "ald" | "gauss" | "exponential",  (default "gev")
//     "response": "y"   or   {"lower": "lo", "upper": "hi"}            (interval censoring)
//     "formula":  [ [term, ...], [term, ...], ... ]    one list per distribution parameter,
//                 or a single [term, ...] list that is reused for every parameter
//     "ald":      {"tau": 0.9, "omega": 0.001}
//     "pp":       {"id": "station", "ny": 30 | {"A": 30, "B": 28}, "r": 45}
//     "options":  {"trace": 0, "maxdata": 1e20, "maxspline": 1e20, "rho0": 0 | [..],
//                  "inits": [..], "outer": "BFGS" | "Newton" | "FD", "seed": 1}
//   }
//
// Terms: "1" (intercept, always present), "x" (linear in column x),
//   {"s": "x", "bs": "cr" | "cc", "k": 10, "knots": [..]},
//   {"s": ["x1", "x2"], "k": 30}                  (thin plate, bs "tp"),
//   {"te": ["x1", "x2"], "k": [6, 8], "bs": "cr" | ["cr", "cc"]}.

#include "evsmooth/error.hpp"
#include "evsmooth/families.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evsmooth {

enum class TermKind { intercept, linear, cr, cc, tp, tensor };

inline std::string to_string(TermKind k) {
  switch (k) {
    case TermKind::intercept: return "intercept";
    case TermKind::linear: return "linear";
    case TermKind::cr: return "cr";
    case TermKind::cc: return "cc";
    case TermKind::tp: return "tp";
    case TermKind::tensor: return "te";
  }
  return "?";
}

inline TermKind parse_term_kind(const std::string& s) {
  for (auto k : {TermKind::intercept, TermKind::linear, TermKind::cr, TermKind::cc, TermKind::tp,
                 TermKind::tensor}) {
    if (to_string(k) == s) return k;
  }
  throw SpecError("unknown basis '" + s + "'");
}

struct TermSpec {
  TermKind kind = TermKind::intercept;
  std::vector<std::string> vars;
  std::vector<int> k;                       // per margin
  std::vector<TermKind> margins;            // tensor margins (cr | cc)
  std::vector<std::vector<double>> knots;   // optional, per margin

  std::string label() const {
    auto join = [&] {
      std::string s;
      for (std::size_t i = 0; i < vars.size(); ++i) s += (i ? "," : "") + vars[i];
      return s;
    };
    switch (kind) {
      case TermKind::intercept: return "(Intercept)";
      case TermKind::linear: return vars.at(0);
      case TermKind::tensor: return "te(" + join() + ")";
      default: return "s(" + join() + ")";
    }
  }
  bool is_smooth() const { return kind != TermKind::intercept && kind != TermKind::linear; }
};

inline constexpr int kDefaultK1d = 10;
inline constexpr int kDefaultKTp = 30;
inline constexpr int kDefaultKTensorMargin = 5;

enum class OuterMethod { bfgs, newton, fd };

inline OuterMethod parse_outer(const std::string& s) {
  if (s == "BFGS" || s == "bfgs") return OuterMethod::bfgs;
  if (s == "Newton" || s == "newton") return OuterMethod::newton;
  if (s == "FD" || s == "fd") return OuterMethod::fd;
  throw SpecError("unknown outer method '" + s + "' (expected BFGS, Newton or FD)");
}

inline std::string to_string(OuterMethod m) {
  switch (m) {
    case OuterMethod::bfgs: return "BFGS";
    case OuterMethod::newton: return "Newton";
    case OuterMethod::fd: return "FD";
  }
  return "?";
}

struct FitOptions {
  int trace = 0;  // -1 silent, 0 warnings, 1 outer iterations, 2 inner iterations
  std::size_t maxdata = std::numeric_limits<std::size_t>::max();
  std::size_t maxspline = std::numeric_limits<std::size_t>::max();
  std::vector<double> rho0 = {0.0};  // one value for all, or one per penalty
  std::vector<double> inits;         // one per parameter (intercepts) or one per coefficient
  OuterMethod outer = OuterMethod::bfgs;
  std::uint64_t seed = 1;
  std::string na_token = "NA";
};

struct PpArgs {
  std::string id;  // empty: all rows form one group
  std::optional<double> ny;
  std::map<std::string, double> ny_by_id;
  int r = -1;  // -1 uses every order statistic
};

struct ModelSpec {
  Family family = Family::gev;
  std::string response;
  std::optional<std::pair<std::string, std::string>> censoring;  // (lower, upper) columns
  std::vector<std::vector<TermSpec>> formulas;                    // one per parameter
  FamilyArgs ald;
  bool has_tau = false;
  PpArgs pp;
  FitOptions options;

  bool censored() const { return censoring.has_value(); }

  // Columns referenced by the predictors.
  std::vector<std::string> covariates() const {
    std::vector<std::string> out;
    for (const auto& f : formulas)
      for (const auto& t : f)
        for (const auto& v : t.vars)
          if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    return out;
  }
};

namespace detail {

using nlohmann::json;

inline std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (j.is_string()) return {j.get<std::string>()};
  if (!j.is_array()) throw SpecError(where + ": expected a string or list of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw SpecError(where + ": expected strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline TermSpec parse_term(const json& j, const std::string& where) {
  TermSpec t;
  if (j.is_string() || j.is_number()) {
    const std::string s = j.is_string() ? j.get<std::string>() : std::to_string(j.get<int>());
    if (s == "1" || s == "intercept") return t;
    t.kind = TermKind::linear;
    t.vars = {s};
    return t;
  }
  if (!j.is_object()) throw SpecError(where + ": term must be a string or an object");
  const bool smooth = j.contains("s");
  const bool tensor = j.contains("te");
  if (smooth == tensor) throw SpecError(where + ": term object needs exactly one of \"s\" or \"te\"");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> allowed = {"s", "te", "bs", "k", "knots"};
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw SpecError(where + ": unknown term field '" + it.key() + "'");
    }
  }
  t.vars = string_list(smooth ? j["s"] : j["te"], where);
  if (t.vars.empty() || t.vars.size() > 2) throw SpecError(where + ": smooths take one or two covariates");

  if (smooth) {
    std::string bs = t.vars.size() == 2 ? "tp" : "cr";
    if (j.contains("bs")) bs = j["bs"].get<std::string>();
    t.kind = parse_term_kind(bs);
    if (t.kind == TermKind::tp && t.vars.size() != 2) throw SpecError(where + ": tp smooths need two covariates");
    if ((t.kind == TermKind::cr || t.kind == TermKind::cc) && t.vars.size() != 1) {
      throw SpecError(where + ": " + bs + " smooths take one covariate; use \"te\" for interactions");
    }
    if (t.kind != TermKind::tp && t.kind != TermKind::cr && t.kind != TermKind::cc) {
      throw SpecError(where + ": unsupported basis '" + bs + "'");
    }
    const int kd = t.kind == TermKind::tp ? kDefaultKTp : kDefaultK1d;
    t.k = {j.contains("k") ? j["k"].get<int>() : kd};
    if (j.contains("knots")) t.knots = {j["knots"].get<std::vector<double>>()};
  } else {
    t.kind = TermKind::tensor;
    const std::size_t d = t.vars.size();
    std::vector<std::string> bs(d, "cr");
    if (j.contains("bs")) {
      bs = string_list(j["bs"], where + ".bs");
      if (bs.size() == 1) bs.assign(d, bs[0]);
    }
    if (bs.size() != d) throw SpecError(where + ": one bs per tensor margin");
    for (const auto& b : bs) {
      const auto k = parse_term_kind(b);
      if (k != TermKind::cr && k != TermKind::cc) throw SpecError(where + ": tensor margins must be cr or cc");
      t.margins.push_back(k);
    }
    t.k.assign(d, kDefaultKTensorMargin);
    if (j.contains("k")) {
      if (j["k"].is_number()) {
        t.k.assign(d, j["k"].get<int>());
      } else {
        t.k = j["k"].get<std::vector<int>>();
      }
    }
    if (t.k.size() != d) throw SpecError(where + ": one k per tensor margin");
    if (j.contains("knots")) t.knots = j["knots"].get<std::vector<std::vector<double>>>();
  }
  for (int k : t.k) {
    if (k < 3) throw SpecError(where + ": basis dimension k must be at least 3");
  }
  if (t.kind == TermKind::tp && t.k[0] < 4) throw SpecError(where + ": tp basis needs k >= 4");
  return t;
}

inline std::vector<TermSpec> parse_formula(const json& j, const std::string& where) {
  if (!j.is_array()) throw SpecError(where + ": a formula is a list of terms");
  std::vector<TermSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    TermSpec t;
    try {
      t = parse_term(j[i], at);
    } catch (const nlohmann::json::exception& e) {
      throw SpecError(at + ": " + e.what());
    }
    if (t.kind != TermKind::intercept) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

// Validates a parsed spec document and applies defaults.
inline ModelSpec parse_spec(const nlohmann::json& j) {
  using detail::json;
  if (!j.is_object()) throw SpecError("spec: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> allowed = {"family", "response", "formula", "ald", "pp", "options"};
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw SpecError("spec: unknown field '" + it.key() + "'");
    }
  }
  ModelSpec spec;
  try {
    if (j.contains("family")) spec.family = parse_family(j["family"].get<std::string>());
    const auto& info = family_info(spec.family);

    if (!j.contains("response")) throw SpecError("spec: missing \"response\"");
    const auto& r = j["response"];
    if (r.is_string()) {
      spec.response = r.get<std::string>();
    } else if (r.is_object() && r.contains("lower") && r.contains("upper")) {
      spec.censoring = std::make_pair(r["lower"].get<std::string>(), r["upper"].get<std::string>());
      if (spec.family == Family::pp) throw SpecError("spec: interval censoring is not available for pp");
    } else {
      throw SpecError("spec.response: expected a column name or {\"lower\", \"upper\"}");
    }

    const int np = info.n_params();
    if (!j.contains("formula")) {
      spec.formulas.assign(np, {});
    } else {
      const auto& f = j["formula"];
      if (!f.is_array()) throw SpecError("spec.formula: expected a list");
      const bool nested = !f.empty() && f[0].is_array();
      if (!nested) {
        spec.formulas.assign(np, detail::parse_formula(f, "spec.formula"));
      } else {
        if (static_cast<int>(f.size()) != np) {
          throw SpecError("spec.formula: family " + info.name + " needs " + std::to_string(np) +
                          " formulas, got " + std::to_string(f.size()));
        }
        for (int p = 0; p < np; ++p) {
          spec.formulas.push_back(detail::parse_formula(f[p], "spec.formula[" + std::to_string(p) + "]"));
        }
      }
    }

    if (j.contains("ald")) {
      const auto& a = j["ald"];
      if (a.contains("tau")) {
        spec.ald.tau = a["tau"].get<double>();
        spec.has_tau = true;
      }
      if (a.contains("omega")) spec.ald.omega = a["omega"].get<double>();
    }
    if (spec.family == Family::ald) {
      if (!spec.has_tau) throw SpecError("spec.ald: tau is required for the ald family");
      if (!(spec.ald.tau > 0.0 && spec.ald.tau < 1.0)) throw SpecError("spec.ald.tau must lie in (0, 1)");
      if (!(spec.ald.omega > 0.0)) throw SpecError("spec.ald.omega must be positive");
    }

    if (j.contains("pp")) {
      const auto& p = j["pp"];
      if (p.contains("id")) spec.pp.id = p["id"].get<std::string>();
      if (p.contains("r")) spec.pp.r = p["r"].get<int>();
      if (p.contains("ny")) {
        if (p["ny"].is_number()) {
          spec.pp.ny = p["ny"].get<double>();
        } else if (p["ny"].is_object()) {
          for (auto it = p["ny"].begin(); it != p["ny"].end(); ++it) {
            spec.pp.ny_by_id[it.key()] = it.value().get<double>();
          }
        } else {
          throw SpecError("spec.pp.ny: expected a number or an object keyed by group id");
        }
      }
    }
    if (spec.family == Family::pp) {
      if (!spec.pp.ny && spec.pp.ny_by_id.empty()) throw SpecError("spec.pp: ny is required for the pp family");
      if (spec.pp.r == 0 || spec.pp.r < -1) throw SpecError("spec.pp.r must be >= 1 or -1");
      if (spec.pp.ny && !(*spec.pp.ny > 0.0)) throw SpecError("spec.pp.ny must be positive");
      for (const auto& [id, v] : spec.pp.ny_by_id) {
        if (!(v > 0.0)) throw SpecError("spec.pp.ny['" + id + "'] must be positive");
      }
      if (!spec.pp.ny_by_id.empty() && spec.pp.id.empty()) {
        throw SpecError("spec.pp: a per-group ny needs pp.id");
      }
    }

    if (j.contains("options")) {
      const auto& o = j["options"];
      auto& opt = spec.options;
      auto size_opt = [&](const char* key, std::size_t& dst) {
        if (!o.contains(key)) return;
        const double v = o[key].get<double>();
        if (!(v >= 1.0)) throw SpecError(std::string("spec.options.") + key + " must be >= 1");
        dst = v >= 1.8e19 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(v);
      };
      if (o.contains("trace")) opt.trace = o["trace"].get<int>();
      size_opt("maxdata", opt.maxdata);
      size_opt("maxspline", opt.maxspline);
      if (o.contains("rho0")) {
        opt.rho0 = o["rho0"].is_number() ? std::vector<double>{o["rho0"].get<double>()}
                                         : o["rho0"].get<std::vector<double>>();
      }
      if (o.contains("inits")) opt.inits = o["inits"].get<std::vector<double>>();
      if (o.contains("outer")) opt.outer = parse_outer(o["outer"].get<std::string>());
      if (o.contains("seed")) opt.seed = o["seed"].get<std::uint64_t>();
      if (o.contains("na")) opt.na_token = o["na"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("spec: ") + e.what());
  }
  return spec;
}

inline ModelSpec parse_spec_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(std::string("spec is not valid JSON: ") + e.what());
  }
  return parse_spec(j);
}

inline ModelSpec parse_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec_text(ss.str());
}

// Inverse of parse_spec: parse_spec(spec_to_json(s)) reproduces s.
inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  using nlohmann::json;
  json j;
  j["family"] = family_info(spec.family).name;
  if (spec.censoring) {
    j["response"] = {{"lower", spec.censoring->first}, {"upper", spec.censoring->second}};
  } else {
    j["response"] = spec.response;
  }
  json formulas = json::array();
  for (const auto& f : spec.formulas) {
    json terms = json::array();
    for (const auto& t : f) {
      switch (t.kind) {
        case TermKind::intercept: break;
        case TermKind::linear: terms.push_back(t.vars[0]); break;
        case TermKind::tensor: {
          json o = {{"te", t.vars}, {"k", t.k}};
          std::vector<std::string> bs;
          for (auto m : t.margins) bs.push_back(to_string(m));
          o["bs"] = bs;
          if (!t.knots.empty()) o["knots"] = t.knots;
          terms.push_back(o);
          break;
        }
        default: {
          json o = {{"s", t.vars}, {"bs", to_string(t.kind)}, {"k", t.k[0]}};
          if (!t.knots.empty()) o["knots"] = t.knots[0];
          terms.push_back(o);
        }
      }
    }
    formulas.push_back(terms);
  }
  j["formula"] = formulas;
  if (spec.has_tau || spec.family == Family::ald) {
    j["ald"] = {{"tau", spec.ald.tau}, {"omega", spec.ald.omega}};
  } else if (spec.ald.omega != FamilyArgs{}.omega) {
    j["ald"] = {{"omega", spec.ald.omega}};
  }
  json pp = json::object();
  if (!spec.pp.id.empty()) pp["id"] = spec.pp.id;
  if (spec.pp.r != -1) pp["r"] = spec.pp.r;
  if (spec.pp.ny) {
    pp["ny"] = *spec.pp.ny;
  } else if (!spec.pp.ny_by_id.empty()) {
    pp["ny"] = spec.pp.ny_by_id;
  }
  if (!pp.empty()) j["pp"] = pp;
  const auto& o = spec.options;
  json opt = {{"trace", o.trace}, {"rho0", o.rho0}, {"outer", to_string(o.outer)}, {"seed", o.seed}, {"na", o.na_token}};
  constexpr auto unlimited = std::numeric_limits<std::size_t>::max();
  if (o.maxdata != unlimited) opt["maxdata"] = o.maxdata;
  if (o.maxspline != unlimited) opt["maxspline"] = o.maxspline;
  if (!o.inits.empty()) opt["inits"] = o.inits;
  j["options"] = opt;
  return j;
}

}  // namespace evsmooth
