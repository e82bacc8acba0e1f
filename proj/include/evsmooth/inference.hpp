#pragma once

// Prediction, delta-method standard errors, Gaussian posterior simulation and
// the model summary. Rows of newdata with a missing covariate give NaN.

#include "evsmooth/fit.hpp"
#include "evsmooth/return_levels.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <Eigen/Dense>

#include <cstdio>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace evsmooth {

enum class Scale { link, response };

inline Scale parse_scale(const std::string& s) {
  if (s == "link") return Scale::link;
  if (s == "response") return Scale::response;
  throw SpecError("scale must be 'link' or 'response', got '" + s + "'");
}

struct Prediction {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows x names
  Eigen::MatrixXd se;      // empty unless requested

  DataTable to_table() const {
    DataTable t;
    for (std::size_t j = 0; j < names.size(); ++j) {
      t.add_column(names[j], Eigen::VectorXd(values.col(static_cast<Eigen::Index>(j))));
    }
    for (std::size_t j = 0; j < names.size() && se.size(); ++j) {
      t.add_column("se:" + names[j], Eigen::VectorXd(se.col(static_cast<Eigen::Index>(j))));
    }
    return t;
  }
};

// Return-level request. For gpd the level is u + GPD quantile with u taken
// from threshold_column when set, else threshold.
struct QuantileRequest {
  std::vector<double> probs;
  std::string threshold_column;
  double threshold = 0.0;
  double m = 1.0;
  double zeta = 1.0;
  double theta = 1.0;
};

inline std::string quantile_label(double p) { return "q:" + format_number(p); }

namespace detail {

// Rows of newdata whose covariates are all present, plus the design
// matrices evaluated on them.
struct NewData {
  std::vector<std::size_t> rows;
  std::size_t n = 0;
  std::vector<Eigen::MatrixXd> X;
};

inline NewData new_data(const FittedModel& model, const DataTable& data) {
  NewData out;
  out.n = data.rows();
  const auto vars = model.spec.covariates();
  for (const auto& v : vars) {
    if (!data.has(v)) throw DataError("newdata has no column '" + v + "'");
  }
  for (std::size_t i = 0; i < out.n; ++i) {
    bool ok = true;
    for (const auto& v : vars) ok = ok && std::isfinite(data.numeric(v)[i]);
    if (ok) out.rows.push_back(i);
  }
  out.X = model.design.designs(out.rows.size() == out.n ? data : data.select_rows(out.rows));
  return out;
}

inline void check_covariance(const FittedModel& model) {
  if (model.V.rows() != model.beta.size() || !model.V.allFinite()) {
    throw FitError("covariance matrix is singular or missing; standard errors unavailable");
  }
}

// eta (complete rows x J) for coefficient vector b.
inline Eigen::MatrixXd linear_predictors(const FittedModel& model, const NewData& nd, const Eigen::VectorXd& b) {
  const int J = model.n_params();
  Eigen::MatrixXd eta(static_cast<Eigen::Index>(nd.rows.size()), J);
  for (int j = 0; j < J; ++j) {
    eta.col(j) = nd.X[j] * b.segment(model.design.param_start[j], model.design.params[j].ncol);
  }
  return eta;
}

inline Eigen::MatrixXd scatter(const NewData& nd, const Eigen::MatrixXd& complete) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nd.n), complete.cols(), kNaN);
  for (std::size_t r = 0; r < nd.rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(nd.rows[r])) = complete.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

inline void check_quantile_request(const FittedModel& model, const QuantileRequest& q) {
  const Family f = model.spec.family;
  if (f != Family::gev && f != Family::pp && f != Family::gpd) {
    throw SpecError("quantiles need family gev, pp or gpd");
  }
  if (q.probs.empty()) throw SpecError("no quantile probabilities given");
  for (double p : q.probs) check_probability(p);
}

inline Eigen::VectorXd thresholds(const DataTable& data, const NewData& nd, const QuantileRequest& q) {
  Eigen::VectorXd u = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nd.rows.size()), q.threshold);
  if (!q.threshold_column.empty()) {
    const auto& col = data.numeric(q.threshold_column);
    for (std::size_t r = 0; r < nd.rows.size(); ++r) u(static_cast<Eigen::Index>(r)) = col[nd.rows[r]];
  }
  return u;
}

// Return level for one row of linear predictors, gradient w.r.t. eta.
inline ReturnLevel row_return_level(Family f, const double* eta, double u, double p, const QuantileRequest& q) {
  if (f == Family::gpd) return gpd_return_level_linked(u, eta[0], eta[1], q.m, q.zeta, q.theta, p);
  return gev_return_level_linked(eta[0], eta[1], eta[2], p);
}

}  // namespace detail

// Per-parameter predictions; on the response scale the inverse links are
// applied and SEs use the delta method.
inline Prediction predict_parameters(const FittedModel& model, const DataTable& newdata, Scale scale,
                                     bool se = false) {
  const auto& info = family_info(model.spec.family);
  const auto nd = detail::new_data(model, newdata);
  const Eigen::MatrixXd eta = detail::linear_predictors(model, nd, model.beta);
  const int J = model.n_params();
  Eigen::MatrixXd vals = eta;
  Eigen::MatrixXd sds;
  if (se) {
    detail::check_covariance(model);
    sds.resize(eta.rows(), J);
    for (int j = 0; j < J; ++j) {
      const int s = model.design.param_start[j];
      const int c = model.design.params[j].ncol;
      const Eigen::MatrixXd& X = nd.X[j];
      sds.col(j) = ((X * model.V.block(s, s, c, c)).cwiseProduct(X)).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
    }
  }
  Prediction out;
  for (int j = 0; j < J; ++j) {
    if (scale == Scale::response && info.links[j] == Link::log) {
      vals.col(j) = eta.col(j).array().exp();
      if (se) sds.col(j) = sds.col(j).cwiseProduct(vals.col(j));
    }
    out.names.push_back(scale == Scale::response ? info.response_names[j] : info.link_names[j]);
  }
  out.values = detail::scatter(nd, vals);
  if (se) out.se = detail::scatter(nd, sds);
  return out;
}

// Closed-form return levels per row, columns "q:<prob>".
inline Prediction predict_quantiles(const FittedModel& model, const DataTable& newdata, const QuantileRequest& q,
                                    bool se = false) {
  detail::check_quantile_request(model, q);
  const auto nd = detail::new_data(model, newdata);
  const Eigen::MatrixXd eta = detail::linear_predictors(model, nd, model.beta);
  const Eigen::VectorXd u = detail::thresholds(newdata, nd, q);
  if (se) detail::check_covariance(model);
  const int J = model.n_params();
  const auto n = eta.rows();
  const auto K = static_cast<Eigen::Index>(q.probs.size());
  Eigen::MatrixXd vals(n, K), sds(se ? n : 0, se ? K : 0);
  Eigen::RowVectorXd g(model.beta.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd e = eta.row(i);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto rl = detail::row_return_level(model.spec.family, e.data(), u(i), q.probs[k], q);
      vals(i, k) = rl.value;
      if (!se) continue;
      for (int j = 0; j < J; ++j) {
        g.segment(model.design.param_start[j], model.design.params[j].ncol) = rl.grad[j] * nd.X[j].row(i);
      }
      sds(i, k) = std::sqrt(std::max(0.0, double(g * model.V * g.transpose())));
    }
  }
  Prediction out;
  for (double p : q.probs) out.names.push_back(quantile_label(p));
  out.values = detail::scatter(nd, vals);
  if (se) out.se = detail::scatter(nd, sds);
  return out;
}

// ---------------------------------------------------------------------------
// Posterior simulation: beta* ~ N(beta_hat, V)

struct SimulationRequest {
  int nsim = 1000;
  std::uint64_t seed = 1;
  Scale scale = Scale::response;
  std::optional<QuantileRequest> quantiles;  // simulate return levels instead of parameters
};

struct Simulation {
  std::vector<std::string> names;     // one per target
  std::vector<Eigen::MatrixXd> draws;  // per target, rows x nsim
  double ridge = 0.0;                  // added to V's diagonal when it was not positive definite
};

inline Eigen::MatrixXd simulate_coefficients(const FittedModel& model, int nsim, std::uint64_t seed,
                                             double* ridge_used = nullptr) {
  if (nsim <= 0) throw SpecError("nsim must be positive");
  detail::check_covariance(model);
  const auto P = model.beta.size();
  double ridge = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(model.V);
  if (llt.info() != Eigen::Success) {
    ridge = 1e-10;
    llt.compute(model.V + ridge * Eigen::MatrixXd::Identity(P, P));
    if (llt.info() != Eigen::Success) throw FitError("covariance matrix is not positive definite");
  }
  if (ridge_used) *ridge_used = ridge;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm;
  Eigen::MatrixXd Z(P, nsim);
  for (int s = 0; s < nsim; ++s)
    for (Eigen::Index i = 0; i < P; ++i) Z(i, s) = norm(rng);
  Eigen::MatrixXd B = llt.matrixL() * Z;
  B.colwise() += model.beta;
  return B;
}

inline Simulation simulate_posterior(const FittedModel& model, const DataTable& newdata,
                                     const SimulationRequest& req) {
  if (req.quantiles) detail::check_quantile_request(model, *req.quantiles);
  Simulation out;
  const Eigen::MatrixXd B = simulate_coefficients(model, req.nsim, req.seed, &out.ridge);
  const auto nd = detail::new_data(model, newdata);
  const auto n = static_cast<Eigen::Index>(nd.rows.size());
  const int J = model.n_params();
  std::vector<Eigen::MatrixXd> eta(J);
  for (int j = 0; j < J; ++j) {
    eta[j] = nd.X[j] * B.middleRows(model.design.param_start[j], model.design.params[j].ncol);
  }
  const auto& info = family_info(model.spec.family);
  if (!req.quantiles) {
    for (int j = 0; j < J; ++j) {
      Eigen::MatrixXd d = eta[j];
      if (req.scale == Scale::response && info.links[j] == Link::log) d = d.array().exp();
      out.names.push_back(req.scale == Scale::response ? info.response_names[j] : info.link_names[j]);
      out.draws.push_back(detail::scatter(nd, d));
    }
    return out;
  }
  const auto& q = *req.quantiles;
  const Eigen::VectorXd u = detail::thresholds(newdata, nd, q);
  for (double p : q.probs) {
    Eigen::MatrixXd d(n, req.nsim);
    double e[3];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int s = 0; s < req.nsim; ++s) {
        for (int j = 0; j < J; ++j) e[j] = eta[j](i, s);
        d(i, s) = detail::row_return_level(model.spec.family, e, u(i), p, q).value;
      }
    }
    out.names.push_back(quantile_label(p));
    out.draws.push_back(detail::scatter(nd, d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary

struct ParametricRow {
  std::string parameter, term;
  double estimate, se, z, p;
};

struct SmoothRow {
  std::string parameter, term;
  double edf;
  int max_df;
  double chi_sq;
  int rank;  // chi-square degrees of freedom, ceil(edf)
  double p;
};

struct Summary {
  std::vector<ParametricRow> parametric;
  std::vector<SmoothRow> smooth;
};

inline Summary summarize(const FittedModel& model) {
  detail::check_covariance(model);
  const boost::math::normal_distribution<double> normal;
  Summary out;
  for (int j = 0; j < model.n_params(); ++j) {
    const auto& par = model.design.params[j];
    for (std::size_t t = 0; t < par.terms.size(); ++t) {
      const auto& term = par.terms[t];
      const int s = model.design.term_start(j, static_cast<int>(t));
      const int d = term.dim();
      if (!term.spec.is_smooth()) {
        const double est = model.beta(s);
        const double se = std::sqrt(model.V(s, s));
        const double z = est / se;
        out.parametric.push_back({par.name, term.spec.label(), est, se, z,
                                  2.0 * boost::math::cdf(boost::math::complement(normal, std::abs(z)))});
        continue;
      }
      const double edf = model.term_edf(j, static_cast<int>(t));
      const int rank = std::clamp(static_cast<int>(std::ceil(edf - 1e-8)), 1, d);
      // Wald statistic with the rank-truncated pseudo-inverse of V_j
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.V.block(s, s, d, d));
      const Eigen::VectorXd proj = es.eigenvectors().transpose() * model.beta.segment(s, d);
      double chi = 0.0;
      for (int r = d - rank; r < d; ++r) {
        if (es.eigenvalues()(r) > 0.0) chi += proj(r) * proj(r) / es.eigenvalues()(r);
      }
      const boost::math::chi_squared_distribution<double> dist(rank);
      out.smooth.push_back({par.name, term.spec.label(), edf, d, chi, rank,
                            boost::math::cdf(boost::math::complement(dist, chi))});
    }
  }
  return out;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string fmt_p(double p) { return p < 2e-16 ? "<2e-16" : fmt("%.3g", p); }

inline std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

}  // namespace detail

inline std::string render_summary(const FittedModel& model, const Summary& s) {
  using detail::fmt;
  using detail::pad;
  std::ostringstream o;
  const auto& dg = model.diagnostics;
  o << "Family: " << family_info(model.spec.family).name << "\n";
  o << "Observations: " << dg.n_used << " used of " << dg.n_input << " (" << dg.n_missing << " missing)";
  if (dg.subsampled) o << ", subsampled";
  o << "\n";
  o << "Log-likelihood: " << fmt("%.6g", model.loglik) << "  LAML: " << fmt("%.6g", model.laml)
    << "  total edf: " << fmt("%.4g", model.total_edf()) << "\n";

  std::size_t w = 12;
  for (const auto& r : s.parametric) w = std::max(w, r.term.size() + 1);
  for (const auto& r : s.smooth) w = std::max(w, r.term.size() + 1);

  o << "\n** Parametric terms **\n";
  std::string current;
  for (const auto& r : s.parametric) {
    if (r.parameter != current) {
      current = r.parameter;
      o << "\n" << current << "\n"
        << pad("", w, true) << pad("Estimate", 11) << pad("Std. Error", 11) << pad("z value", 9)
        << pad("Pr(>|z|)", 10) << "\n";
    }
    o << pad(r.term, w, true) << pad(fmt("%.4g", r.estimate), 11) << pad(fmt("%.4g", r.se), 11)
      << pad(fmt("%.3f", r.z), 9) << pad(detail::fmt_p(r.p), 10) << "\n";
  }
  if (!s.smooth.empty()) {
    o << "\n** Smooth terms **\n";
    current.clear();
    for (const auto& r : s.smooth) {
      if (r.parameter != current) {
        current = r.parameter;
        o << "\n" << current << "\n"
          << pad("", w, true) << pad("edf", 8) << pad("max.df", 8) << pad("Chi.sq", 10) << pad("Pr(>|t|)", 10)
          << "\n";
      }
      o << pad(r.term, w, true) << pad(fmt("%.2f", r.edf), 8) << pad(std::to_string(r.max_df), 8)
        << pad(fmt("%.2f", r.chi_sq), 10) << pad(detail::fmt_p(r.p), 10) << "\n";
    }
    o << "\nSmooth-term p-values are approximate tests (Wald statistic with a rank-ceil(edf) pseudo-inverse).\n";
  }
  return o.str();
}

}  // namespace evsmooth
