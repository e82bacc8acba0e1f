#pragma once

// Assembly of per-parameter design matrices and penalty blocks from a
// ModelSpec. Smooths are centred (sum-to-zero over the basis data) by a
// stored null-space transform Z, and their penalties are rescaled so that
// lambda = 1 is a sensible starting point; both are kept so prediction
// rebuilds exactly the training design.

#include "evsmooth/basis.hpp"
#include "evsmooth/model_spec.hpp"
#include "evsmooth/table.hpp"

#include <Eigen/Dense>

#include <string>
#include <variant>
#include <vector>

namespace evsmooth {

struct SmoothTerm {
  TermSpec spec;
  std::variant<std::monostate, CubicSpline1D, ThinPlate2D, TensorSpline> basis;
  Eigen::MatrixXd Z;                         // raw -> constrained coefficients (empty: none)
  std::vector<Eigen::MatrixXd> penalties;    // constrained, scaled; dim() x dim()
  std::vector<double> penalty_scale;         // factor applied to each raw penalty

  int raw_dim() const {
    switch (spec.kind) {
      case TermKind::intercept:
      case TermKind::linear: return 1;
      case TermKind::cr:
      case TermKind::cc: return std::get<CubicSpline1D>(basis).dim();
      case TermKind::tp: return std::get<ThinPlate2D>(basis).dim();
      case TermKind::tensor: return std::get<TensorSpline>(basis).dim();
    }
    return 0;
  }
  int dim() const { return Z.size() ? static_cast<int>(Z.cols()) : raw_dim(); }

  Eigen::MatrixXd raw_design(const DataTable& data) const {
    const auto n = static_cast<Eigen::Index>(data.rows());
    switch (spec.kind) {
      case TermKind::intercept: return Eigen::MatrixXd::Ones(n, 1);
      case TermKind::linear: return data.vector(spec.vars[0]);
      case TermKind::cr:
      case TermKind::cc: return std::get<CubicSpline1D>(basis).evaluate(data.vector(spec.vars[0]));
      case TermKind::tp:
        return std::get<ThinPlate2D>(basis).evaluate(data.vector(spec.vars[0]), data.vector(spec.vars[1]));
      case TermKind::tensor: {
        std::vector<Eigen::VectorXd> x;
        for (const auto& v : spec.vars) x.push_back(data.vector(v));
        return std::get<TensorSpline>(basis).evaluate(x);
      }
    }
    return {};
  }

  Eigen::MatrixXd design(const DataTable& data) const {
    Eigen::MatrixXd X = raw_design(data);
    return Z.size() ? Eigen::MatrixXd(X * Z) : X;
  }
};

struct ParameterDesign {
  std::string name;  // linked parameter name, e.g. "logscale"
  std::vector<SmoothTerm> terms;
  std::vector<int> start;  // first column of each term within this parameter
  int ncol = 0;

  Eigen::MatrixXd design(const DataTable& data) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(data.rows()), ncol);
    for (std::size_t t = 0; t < terms.size(); ++t) {
      X.middleCols(start[t], terms[t].dim()) = terms[t].design(data);
    }
    return X;
  }
};

// One smoothing parameter: S occupies the columns [start, start + S.rows())
// of the full coefficient vector.
struct PenaltyBlock {
  int param = 0;
  int term = 0;
  int start = 0;
  int group = 0;  // blocks sharing columns (tensor margins) share a group
  Eigen::MatrixXd S;
  std::string label;
};

struct ModelDesign {
  std::vector<ParameterDesign> params;
  std::vector<int> param_start;
  int ncoef = 0;
  std::vector<PenaltyBlock> penalties;
  int ngroups = 0;

  // Column range of a term in the full coefficient vector.
  int term_start(int p, int t) const { return param_start[p] + params[p].start[t]; }

  std::vector<Eigen::MatrixXd> designs(const DataTable& data) const {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& p : params) out.push_back(p.design(data));
    return out;
  }

  // Coefficient names "<param>:<term label>[.<j>]".
  std::vector<std::string> coef_names() const {
    std::vector<std::string> out;
    for (const auto& p : params) {
      for (const auto& t : p.terms) {
        const int d = t.dim();
        for (int j = 0; j < d; ++j) {
          out.push_back(p.name + ":" + t.spec.label() + (t.spec.is_smooth() ? "." + std::to_string(j + 1) : ""));
        }
      }
    }
    return out;
  }
};

namespace detail {

inline Eigen::VectorXd knots_or_default(const TermSpec& t, std::size_t m, const Eigen::VectorXd& x) {
  if (m < t.knots.size() && !t.knots[m].empty()) {
    Eigen::VectorXd k = Eigen::Map<const Eigen::VectorXd>(t.knots[m].data(), t.knots[m].size());
    return k;
  }
  return place_knots(x, t.k[m]);
}

inline void require_finite(const DataTable& data, const std::string& name) {
  for (double v : data.numeric(name)) {
    if (!std::isfinite(v)) throw DataError("covariate '" + name + "' has missing or non-finite values");
  }
}

}  // namespace detail

// Builds one term's basis from basis_data (which sets knots, eigenbasis and
// centring constraint).
inline SmoothTerm build_term(const TermSpec& spec, const DataTable& basis_data, std::uint64_t seed) {
  SmoothTerm term;
  term.spec = spec;
  for (const auto& v : spec.vars) {
    if (!basis_data.has(v)) throw DataError("unknown covariate '" + v + "'");
    detail::require_finite(basis_data, v);
  }
  std::vector<Eigen::MatrixXd> raw_penalties;
  switch (spec.kind) {
    case TermKind::intercept:
    case TermKind::linear: return term;
    case TermKind::cr:
    case TermKind::cc: {
      const Eigen::VectorXd x = basis_data.vector(spec.vars[0]);
      auto spline = make_cubic_spline(detail::knots_or_default(spec, 0, x), spec.kind == TermKind::cc);
      raw_penalties.push_back(spline.penalty);
      term.basis = std::move(spline);
      break;
    }
    case TermKind::tp: {
      auto b = build_tp_basis(basis_data.vector(spec.vars[0]), basis_data.vector(spec.vars[1]), spec.k[0],
                              2000, seed);
      raw_penalties.push_back(b.spline.penalty);
      term.basis = std::move(b.spline);
      break;
    }
    case TermKind::tensor: {
      TensorSpline ts;
      for (std::size_t m = 0; m < spec.vars.size(); ++m) {
        const Eigen::VectorXd x = basis_data.vector(spec.vars[m]);
        ts.margins.push_back(
            make_cubic_spline(detail::knots_or_default(spec, m, x), spec.margins[m] == TermKind::cc));
      }
      if (ts.dim() > 1000) {
        throw SpecError("tensor product dimension " + std::to_string(ts.dim()) + " exceeds the cap of 1000");
      }
      raw_penalties = ts.penalties();
      term.basis = std::move(ts);
      break;
    }
  }

  const Eigen::MatrixXd X = term.raw_design(basis_data);
  term.Z = sum_to_zero_transform(X.colwise().sum());
  const Eigen::MatrixXd Xc = X * term.Z;
  const double xnorm = Xc.rowwise().lpNorm<1>().maxCoeff();
  for (const auto& S : raw_penalties) {
    Eigen::MatrixXd Sc = term.Z.transpose() * S * term.Z;
    Sc = 0.5 * (Sc + Sc.transpose()).eval();
    const double snorm = Sc.cwiseAbs().colwise().sum().maxCoeff();
    const double scale = snorm > 0.0 ? xnorm * xnorm / snorm : 1.0;
    term.penalties.push_back(Sc * scale);
    term.penalty_scale.push_back(scale);
  }
  return term;
}

inline ParameterDesign build_parameter(const std::string& name, const std::vector<TermSpec>& formula,
                                       const DataTable& basis_data, std::uint64_t seed) {
  ParameterDesign p;
  p.name = name;
  p.terms.push_back(build_term(TermSpec{}, basis_data, seed));
  for (const auto& t : formula) p.terms.push_back(build_term(t, basis_data, seed));
  for (const auto& t : p.terms) {
    p.start.push_back(p.ncol);
    p.ncol += t.dim();
  }
  return p;
}

// Re-derives penalty bookkeeping from the parameter designs.
inline void index_penalties(ModelDesign& d) {
  d.param_start.clear();
  d.penalties.clear();
  d.ncoef = 0;
  d.ngroups = 0;
  for (std::size_t p = 0; p < d.params.size(); ++p) {
    d.param_start.push_back(d.ncoef);
    d.ncoef += d.params[p].ncol;
  }
  for (std::size_t p = 0; p < d.params.size(); ++p) {
    const auto& par = d.params[p];
    for (std::size_t t = 0; t < par.terms.size(); ++t) {
      const auto& term = par.terms[t];
      if (term.penalties.empty()) continue;
      for (std::size_t j = 0; j < term.penalties.size(); ++j) {
        PenaltyBlock b;
        b.param = static_cast<int>(p);
        b.term = static_cast<int>(t);
        b.start = d.term_start(b.param, b.term);
        b.group = d.ngroups;
        b.S = term.penalties[j];
        b.label = par.name + ":" + term.spec.label() + (term.penalties.size() > 1 ? "#" + std::to_string(j + 1) : "");
        d.penalties.push_back(std::move(b));
      }
      ++d.ngroups;
    }
  }
}

// basis_data fixes knots and constraints (it may be a subsample of the fit data).
inline ModelDesign assemble_design(const ModelSpec& spec, const DataTable& basis_data) {
  const auto& info = family_info(spec.family);
  if (static_cast<int>(spec.formulas.size()) != info.n_params()) {
    throw SpecError("model needs " + std::to_string(info.n_params()) + " formulas");
  }
  ModelDesign d;
  for (int p = 0; p < info.n_params(); ++p) {
    d.params.push_back(build_parameter(info.link_names[p], spec.formulas[p], basis_data, spec.options.seed));
  }
  index_penalties(d);
  return d;
}

}  // namespace evsmooth
