#pragma once

// model.json: everything prediction needs (spec, bases, constraints,
// penalties, estimates, covariance) plus the fit diagnostics. Doubles are
// written in shortest round-trip form so a save/load cycle is bit-exact;
// non-finite values are written as null.

#include "evsmooth/fit.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace evsmooth {

inline constexpr int kModelSchemaVersion = 1;
inline constexpr const char* kModelFormat = "evsmooth-model";

namespace io {

using nlohmann::json;

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number(const json& j) {
  if (j.is_null()) return kNaN;
  return j.get<double>();
}

inline json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline Eigen::VectorXd vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i]);
  return v;
}

inline json mat(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(number(m(i, c)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd mat(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r * c) throw IoError("model: matrix size mismatch");
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = number(data[static_cast<std::size_t>(i * c + k)]);
  return m;
}

inline json spline(const CubicSpline1D& s) {
  return {{"cyclic", s.cyclic}, {"knots", vec(s.knots)}, {"second_derivs", mat(s.second_derivs)},
          {"penalty", mat(s.penalty)}};
}

inline CubicSpline1D spline(const json& j) {
  CubicSpline1D s;
  s.cyclic = j.at("cyclic").get<bool>();
  s.knots = vec(j.at("knots"));
  s.second_derivs = mat(j.at("second_derivs"));
  s.penalty = mat(j.at("penalty"));
  return s;
}

inline json term(const SmoothTerm& t) {
  json j = json::object();
  if (const auto* s = std::get_if<CubicSpline1D>(&t.basis)) {
    j["spline"] = spline(*s);
  } else if (const auto* tp = std::get_if<ThinPlate2D>(&t.basis)) {
    j["thin_plate"] = {{"knots", mat(tp->knots)}, {"kernel_map", mat(tp->kernel_map)}, {"penalty", mat(tp->penalty)}};
  } else if (const auto* te = std::get_if<TensorSpline>(&t.basis)) {
    json m = json::array();
    for (const auto& s : te->margins) m.push_back(spline(s));
    j["tensor"] = m;
  }
  j["Z"] = mat(t.Z);
  json pen = json::array();
  for (const auto& S : t.penalties) pen.push_back(mat(S));
  j["penalties"] = pen;
  j["penalty_scale"] = t.penalty_scale;
  return j;
}

inline SmoothTerm term(const json& j, const TermSpec& spec) {
  SmoothTerm t;
  t.spec = spec;
  if (j.contains("spline")) {
    t.basis = spline(j["spline"]);
  } else if (j.contains("thin_plate")) {
    const auto& tp = j["thin_plate"];
    t.basis = ThinPlate2D{mat(tp.at("knots")), mat(tp.at("kernel_map")), mat(tp.at("penalty"))};
  } else if (j.contains("tensor")) {
    TensorSpline te;
    for (const auto& m : j["tensor"]) te.margins.push_back(spline(m));
    t.basis = te;
  }
  const bool smooth = spec.is_smooth();
  if (smooth != (t.basis.index() != 0)) throw IoError("model: term basis does not match its spec");
  t.Z = mat(j.at("Z"));
  for (const auto& S : j.at("penalties")) t.penalties.push_back(mat(S));
  t.penalty_scale = j.at("penalty_scale").get<std::vector<double>>();
  return t;
}

inline json diagnostics(const FitDiagnostics& d) {
  return {{"n_input", d.n_input},
          {"n_missing", d.n_missing},
          {"n_used", d.n_used},
          {"n_basis", d.n_basis},
          {"n_terms", d.n_terms},
          {"subsampled", d.subsampled},
          {"outer_method", d.outer_method},
          {"outer_iterations", d.outer_iterations},
          {"laml_evaluations", d.laml_evaluations},
          {"outer_converged", d.outer_converged},
          {"outer_message", d.outer_message},
          {"laml_initial", number(d.laml_initial)},
          {"laml_gradient", vec(d.laml_gradient)},
          {"inner_iterations", d.inner_iterations},
          {"inner_converged", d.inner_converged},
          {"inner_gradient", number(d.inner_gradient)},
          {"ridge", number(d.ridge)},
          {"warnings", d.warnings}};
}

inline FitDiagnostics diagnostics(const json& j) {
  FitDiagnostics d;
  d.n_input = j.at("n_input").get<std::size_t>();
  d.n_missing = j.at("n_missing").get<std::size_t>();
  d.n_used = j.at("n_used").get<std::size_t>();
  d.n_basis = j.at("n_basis").get<std::size_t>();
  d.n_terms = j.at("n_terms").get<std::size_t>();
  d.subsampled = j.at("subsampled").get<bool>();
  d.outer_method = j.at("outer_method").get<std::string>();
  d.outer_iterations = j.at("outer_iterations").get<int>();
  d.laml_evaluations = j.at("laml_evaluations").get<int>();
  d.outer_converged = j.at("outer_converged").get<bool>();
  d.outer_message = j.at("outer_message").get<std::string>();
  d.laml_initial = number(j.at("laml_initial"));
  d.laml_gradient = vec(j.at("laml_gradient"));
  d.inner_iterations = j.at("inner_iterations").get<int>();
  d.inner_converged = j.at("inner_converged").get<bool>();
  d.inner_gradient = number(j.at("inner_gradient"));
  d.ridge = number(j.at("ridge"));
  d.warnings = j.at("warnings").get<std::vector<std::string>>();
  return d;
}

}  // namespace io

inline nlohmann::json model_to_json(const FittedModel& m) {
  using io::json;
  json params = json::array();
  for (const auto& p : m.design.params) {
    json terms = json::array();
    for (const auto& t : p.terms) terms.push_back(io::term(t));
    params.push_back({{"name", p.name}, {"terms", terms}});
  }
  return {{"format", kModelFormat},
          {"schema_version", kModelSchemaVersion},
          {"spec", spec_to_json(m.spec)},
          {"design", params},
          {"coefficient_names", m.design.coef_names()},
          {"beta", io::vec(m.beta)},
          {"rho", io::vec(m.rho)},
          {"V", io::mat(m.V)},
          {"edf", io::vec(m.edf)},
          {"loglik", io::number(m.loglik)},
          {"laml", io::number(m.laml)},
          {"diagnostics", io::diagnostics(m.diagnostics)}};
}

inline FittedModel model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("format", "") != kModelFormat) throw IoError("not an evsmooth model file");
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw IoError("model schema version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kModelSchemaVersion) + ")");
    }
    FittedModel m;
    m.spec = parse_spec(j.at("spec"));
    const auto& info = family_info(m.spec.family);
    const auto& params = j.at("design");
    if (static_cast<int>(params.size()) != info.n_params()) throw IoError("model: wrong number of parameters");
    for (std::size_t p = 0; p < params.size(); ++p) {
      ParameterDesign pd;
      pd.name = params[p].at("name").get<std::string>();
      const auto& terms = params[p].at("terms");
      const auto& formula = m.spec.formulas[p];
      if (terms.size() != formula.size() + 1) throw IoError("model: term count does not match the spec");
      for (std::size_t t = 0; t < terms.size(); ++t) {
        pd.terms.push_back(io::term(terms[t], t == 0 ? TermSpec{} : formula[t - 1]));
        pd.start.push_back(pd.ncol);
        pd.ncol += pd.terms.back().dim();
      }
      m.design.params.push_back(std::move(pd));
    }
    index_penalties(m.design);
    m.beta = io::vec(j.at("beta"));
    m.rho = io::vec(j.at("rho"));
    m.V = io::mat(j.at("V"));
    m.edf = io::vec(j.at("edf"));
    m.loglik = io::number(j.at("loglik"));
    m.laml = io::number(j.at("laml"));
    m.diagnostics = io::diagnostics(j.at("diagnostics"));
    const auto P = static_cast<Eigen::Index>(m.design.ncoef);
    if (m.beta.size() != P || m.edf.size() != P || m.V.rows() != P || m.V.cols() != P ||
        m.rho.size() != static_cast<Eigen::Index>(m.design.penalties.size())) {
      throw IoError("model: coefficient dimensions are inconsistent");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model: ") + e.what());
  } catch (const SpecError& e) {
    throw IoError(std::string("model: ") + e.what());
  }
}

inline void save_model(const FittedModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << model_to_json(m).dump(1) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline FittedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("model '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace evsmooth
