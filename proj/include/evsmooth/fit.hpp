#pragma once

// Penalized likelihood fitting. Inner Newton iterations find the coefficients
// at fixed smoothing parameters; the outer loop minimises the Laplace
// approximate restricted (REML) criterion over rho = log(lambda).

#include "evsmooth/declustering.hpp"
#include "evsmooth/design.hpp"
#include "evsmooth/likelihood.hpp"
#include "evsmooth/model_spec.hpp"
#include "evsmooth/table.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace evsmooth {

inline constexpr double kRhoBound = 15.0;

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  DataTable design_data;  // one row per likelihood term (per group for pp)
  DataTable basis_data;   // rows used to build bases (maxspline)
  ResponseData response;
  std::size_t n_input = 0;
  std::size_t n_missing = 0;
  std::size_t n_used = 0;  // rows after dropping missing values and subsampling
  std::size_t n_basis = 0;
  bool subsampled = false;
  std::vector<std::string> warnings;
};

// m indices out of n without replacement, in increasing order.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (m >= n) return all;
  std::vector<std::size_t> out;
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), m, rng);
  return out;
}

inline PreparedData prepare_data(const ModelSpec& spec, const DataTable& data) {
  PreparedData p;
  p.n_input = data.rows();
  const std::string lo_col = spec.censoring ? spec.censoring->first : spec.response;
  const std::string hi_col = spec.censoring ? spec.censoring->second : spec.response;
  const auto& lo = data.numeric(lo_col);
  const auto& hi = data.numeric(hi_col);
  std::vector<const std::vector<double>*> covs;
  for (const auto& c : spec.covariates()) {
    if (!data.has(c)) throw DataError("unknown covariate '" + c + "'");
    covs.push_back(&data.numeric(c));
  }
  if (spec.family == Family::pp && !spec.pp.id.empty() && !data.has(spec.pp.id)) {
    throw DataError("data has no pp id column '" + spec.pp.id + "'");
  }

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    bool ok = !std::isnan(lo[i]) && !std::isnan(hi[i]);
    for (const auto* c : covs) ok = ok && std::isfinite((*c)[i]);
    if (ok) keep.push_back(i);
  }
  p.n_missing = data.rows() - keep.size();
  if (keep.empty()) throw DataError("no rows left after removing missing values");
  if (keep.size() > spec.options.maxdata) {
    const auto pick = subsample_indices(keep.size(), spec.options.maxdata, spec.options.seed);
    std::vector<std::size_t> sub;
    for (auto j : pick) sub.push_back(keep[j]);
    keep.swap(sub);
    p.subsampled = true;
  }
  const DataTable used = data.select_rows(keep);
  p.n_used = used.rows();

  auto& r = p.response;
  r.family = spec.family;
  r.args = spec.ald;
  if (spec.family == Family::pp) {
    auto rl = r_largest(used, spec.pp.id, spec.response, spec.pp.r, spec.pp.ny, spec.pp.ny_by_id);
    for (auto& w : rl.warnings) p.warnings.push_back(std::move(w));
    r.groups = std::move(rl.groups);
    p.design_data = used.select_rows(rl.first_row);
    for (const auto& g : r.groups) {
      for (double v : g.values)
        if (!std::isfinite(v)) throw DataError("pp responses must be finite");
    }
  } else {
    r.lower = used.vector(lo_col);
    r.upper = used.vector(hi_col);
    for (Eigen::Index i = 0; i < r.lower.size(); ++i) {
      const double a = r.lower(i);
      const double b = r.upper(i);
      if (a > b) throw DataError("row " + std::to_string(keep[i] + 1) + ": censoring lower bound exceeds upper");
      if (a == b && !std::isfinite(a)) throw DataError("row " + std::to_string(keep[i] + 1) + ": infinite response");
      if (spec.family == Family::gpd && a == b && !(a > 0.0)) {
        throw DataError("gpd responses must be positive threshold excesses (row " + std::to_string(keep[i] + 1) + ")");
      }
      if (spec.family == Family::exponential && a == b && a < 0.0) {
        throw DataError("exponential responses must be non-negative (row " + std::to_string(keep[i] + 1) + ")");
      }
    }
    p.design_data = used;
  }
  const auto bidx = subsample_indices(p.design_data.rows(), spec.options.maxspline, spec.options.seed + 1);
  p.basis_data = bidx.size() == p.design_data.rows() ? p.design_data : p.design_data.select_rows(bidx);
  p.n_basis = p.basis_data.rows();
  return p;
}

// ---------------------------------------------------------------------------
// Penalized objective

class PenalizedProblem {
 public:
  PenalizedProblem(const ModelDesign& design, const DataTable& data, const ResponseData& response)
      : design_(&design), response_(&response), X_(design.designs(data)) {
    for (const auto& X : X_) {
      if (X.rows() != response.rows()) throw FitError("design and response row counts differ");
    }
    for (int g = 0; g < design.ngroups; ++g) {
      const auto blocks = group_blocks(g);
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(blocks.front()->S.rows(), blocks.front()->S.cols());
      for (const auto* b : blocks) S += b->S;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
      const double top = eig.eigenvalues().maxCoeff();
      ranks_.push_back(static_cast<int>((eig.eigenvalues().array() > 1e-10 * top).count()));
    }
  }

  const ModelDesign& design() const { return *design_; }
  const ResponseData& response() const { return *response_; }
  const std::vector<Eigen::MatrixXd>& designs() const { return X_; }
  int ncoef() const { return design_->ncoef; }
  int npenalties() const { return static_cast<int>(design_->penalties.size()); }
  const std::vector<int>& penalty_ranks() const { return ranks_; }

  Eigen::MatrixXd eta(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd e(response_->rows(), X_.size());
    for (std::size_t j = 0; j < X_.size(); ++j) {
      e.col(j) = X_[j] * beta.segment(design_->param_start[j], X_[j].cols());
    }
    return e;
  }

  double negloglik(const Eigen::VectorXd& beta) const {
    if (!beta.allFinite()) return kInf;
    return evaluate_likelihood(*response_, eta(beta), false).negloglik;
  }

  struct Derivs {
    double nll = kInf;
    bool feasible = false;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
  };

  // Negative log-likelihood with its gradient and Hessian in beta.
  Derivs derivs(const Eigen::VectorXd& beta) const {
    Derivs d;
    if (!beta.allFinite()) return d;
    const auto ev = evaluate_likelihood(*response_, eta(beta), true);
    if (!ev.feasible) return d;
    const int J = static_cast<int>(X_.size());
    d.nll = ev.negloglik;
    d.feasible = true;
    d.grad.resize(ncoef());
    d.hess.resize(ncoef(), ncoef());
    for (int a = 0; a < J; ++a) {
      const int sa = design_->param_start[a];
      d.grad.segment(sa, X_[a].cols()) = X_[a].transpose() * ev.grad.col(a);
      for (int b = a; b < J; ++b) {
        const int sb = design_->param_start[b];
        const Eigen::MatrixXd WX = X_[b].array().colwise() * ev.hess.col(a * J + b).array();
        const Eigen::MatrixXd block = X_[a].transpose() * WX;
        d.hess.block(sa, sb, X_[a].cols(), X_[b].cols()) = block;
        if (b != a) d.hess.block(sb, sa, X_[b].cols(), X_[a].cols()) = block.transpose();
      }
    }
    return d;
  }

  // S_lambda embedded in the full coefficient space.
  Eigen::MatrixXd penalty(const Eigen::VectorXd& lambda) const {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ncoef(), ncoef());
    for (std::size_t k = 0; k < design_->penalties.size(); ++k) {
      const auto& b = design_->penalties[k];
      S.block(b.start, b.start, b.S.rows(), b.S.cols()) += lambda(k) * b.S;
    }
    return S;
  }

  // Log pseudo-determinant of S_lambda: per group of overlapping penalties,
  // the sum of logs of its (fixed number of) structurally positive eigenvalues.
  double log_det_penalty(const Eigen::VectorXd& lambda) const {
    double total = 0.0;
    for (int g = 0; g < design_->ngroups; ++g) {
      const auto blocks = group_blocks(g);
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(blocks.front()->S.rows(), blocks.front()->S.cols());
      for (const auto* b : blocks) S += lambda(b - design_->penalties.data()) * b->S;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
      const auto& ev = eig.eigenvalues();  // ascending
      for (int i = 0; i < ranks_[g]; ++i) total += std::log(std::max(ev(ev.size() - 1 - i), 1e-300));
    }
    return total;
  }

 private:
  std::vector<const PenaltyBlock*> group_blocks(int g) const {
    std::vector<const PenaltyBlock*> out;
    for (const auto& b : design_->penalties)
      if (b.group == g) out.push_back(&b);
    return out;
  }

  const ModelDesign* design_;
  const ResponseData* response_;
  std::vector<Eigen::MatrixXd> X_;
  std::vector<int> ranks_;
};

// Cholesky factor of A, adding a ridge of 1e-7 * max|diag| (escalating x10)
// when A is not positive definite. Returns the ridge used.
inline double ridged_llt(const Eigen::MatrixXd& A, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(A);
  if (llt.info() == Eigen::Success) return 0.0;
  double ridge = 1e-7 * std::max(A.diagonal().cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  for (int i = 0; i < 40; ++i, ridge *= 10.0) {
    llt.compute(A + ridge * I);
    if (llt.info() == Eigen::Success) return ridge;
  }
  throw FitError("penalized Hessian could not be made positive definite");
}

// ---------------------------------------------------------------------------
// Inner iterations

struct InnerOptions {
  int max_iter = 200;
  int max_halvings = 30;
  double tol = 1e-7;
  int trace = 0;
};

struct InnerResult {
  Eigen::VectorXd beta;
  double penalized = kInf;  // nll + beta' S beta / 2
  double nll = kInf;
  Eigen::VectorXd grad;  // penalized gradient
  Eigen::MatrixXd H;     // unpenalized negative log-likelihood Hessian
  Eigen::MatrixXd Hp;    // H + S_lambda
  double log_det_Hp = 0.0;
  double ridge = 0.0;  // added to Hp for the final factorization
  double max_ridge = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

inline InnerResult inner_newton(const PenalizedProblem& P, const Eigen::MatrixXd& S, Eigen::VectorXd beta,
                                const InnerOptions& opt = {}) {
  InnerResult res;
  auto d = P.derivs(beta);
  if (!d.feasible) {
    res.message = "starting coefficients give an observation outside the support";
    res.beta = beta;
    return res;
  }
  double f = d.nll + 0.5 * beta.dot(S * beta);
  bool polished = false;
  const double eps = std::numeric_limits<double>::epsilon();
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int it = 0;; ++it) {
    const Eigen::VectorXd g = d.grad + S * beta;
    const double gmax = g.lpNorm<Eigen::Infinity>();
    const double scale = std::max(1.0, std::abs(f));
    const bool small = gmax < opt.tol * scale;
    if (opt.trace >= 2) {
      std::clog << "  inner " << it << "  objective " << f << "  |grad| " << gmax << '\n';
    }
    if (small && polished) {
      res.converged = true;
      break;
    }
    if (small) polished = true;
    if (it >= opt.max_iter) {
      res.message = "inner Newton iterations did not converge in " + std::to_string(opt.max_iter) + " steps";
      break;
    }
    res.max_ridge = std::max(res.max_ridge, ridged_llt(d.hess + S, llt));
    const Eigen::VectorXd step = -llt.solve(g);
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, alpha *= 0.5) {
      const Eigen::VectorXd bn = beta + alpha * step;
      const double fn = P.negloglik(bn) + 0.5 * bn.dot(S * bn);
      if (std::isfinite(fn) && fn <= f + 8.0 * eps * scale) {
        beta = bn;
        f = fn;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // no further decrease possible: accept if already at the numerical floor
      if (small || gmax < 1e-4 * scale) {
        res.converged = true;
      } else {
        res.message = "step halving failed to reduce the penalized objective";
      }
      break;
    }
    d = P.derivs(beta);
    ++res.iterations;
  }
  res.beta = beta;
  res.nll = d.nll;
  res.penalized = d.nll + 0.5 * beta.dot(S * beta);
  res.grad = d.grad + S * beta;
  res.H = d.hess;
  res.Hp = d.hess + S;
  res.ridge = ridged_llt(res.Hp, llt);
  res.log_det_Hp = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return res;
}

// ---------------------------------------------------------------------------
// Restricted likelihood

struct LamlResult {
  double value = kInf;
  InnerResult inner;
};

// Negative Laplace-approximate restricted log-likelihood (constants dropped):
// f(beta_hat) + log|H_p| / 2 - log|S_lambda|_+ / 2, with f the penalized
// negative log-likelihood.
inline LamlResult laml(const PenalizedProblem& P, const Eigen::VectorXd& rho, const Eigen::VectorXd& beta0,
                       const InnerOptions& opt = {}) {
  const Eigen::VectorXd lambda = rho.array().exp();
  LamlResult r;
  r.inner = inner_newton(P, P.penalty(lambda), beta0, opt);
  if (!r.inner.converged) return r;
  r.value = r.inner.penalized + 0.5 * r.inner.log_det_Hp - 0.5 * P.log_det_penalty(lambda);
  return r;
}

struct OuterResult {
  Eigen::VectorXd rho;
  double laml = kInf;
  double laml_initial = kInf;
  Eigen::VectorXd gradient;  // finite-difference gradient at rho
  InnerResult inner;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

struct OuterOptions {
  OuterMethod method = OuterMethod::bfgs;
  int max_iter = 100;
  double fd_step = 1e-4;
  double fd_hessian_step = 1e-2;
  double max_step = 5.0;
  int trace = 0;
  InnerOptions inner;
};

namespace detail {

class LamlObjective {
 public:
  LamlObjective(const PenalizedProblem& P, const InnerOptions& opt) : P_(P), opt_(opt) {}
  double operator()(const Eigen::VectorXd& rho, const Eigen::VectorXd& warm) {
    ++evaluations;
    return laml(P_, rho, warm, opt_).value;
  }
  LamlResult full(const Eigen::VectorXd& rho, const Eigen::VectorXd& warm) {
    ++evaluations;
    return laml(P_, rho, warm, opt_);
  }
  int evaluations = 0;

 private:
  const PenalizedProblem& P_;
  InnerOptions opt_;
};

inline Eigen::VectorXd clamp_rho(Eigen::VectorXd rho) {
  return rho.cwiseMax(-kRhoBound).cwiseMin(kRhoBound);
}

// Zero the components that push against an active bound.
inline Eigen::VectorXd project(Eigen::VectorXd g, const Eigen::VectorXd& rho) {
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    if ((rho(k) >= kRhoBound && g(k) < 0.0) || (rho(k) <= -kRhoBound && g(k) > 0.0)) g(k) = 0.0;
  }
  return g;
}

}  // namespace detail

// Central finite-difference gradient of the LAML objective.
inline Eigen::VectorXd laml_gradient(const PenalizedProblem& P, const Eigen::VectorXd& rho,
                                     const Eigen::VectorXd& warm, double h = 1e-4,
                                     const InnerOptions& opt = {}, double center = kNaN) {
  Eigen::VectorXd g(rho.size());
  for (Eigen::Index k = 0; k < rho.size(); ++k) {
    Eigen::VectorXd a = rho, b = rho;
    a(k) += h;
    b(k) -= h;
    const double fa = laml(P, a, warm, opt).value;
    const double fb = laml(P, b, warm, opt).value;
    if (std::isfinite(fa) && std::isfinite(fb)) {
      g(k) = (fa - fb) / (2.0 * h);
    } else {
      const double fc = std::isnan(center) ? laml(P, rho, warm, opt).value : center;
      g(k) = std::isfinite(fa) ? (fa - fc) / h : (std::isfinite(fb) ? (fc - fb) / h : 0.0);
    }
  }
  return g;
}

inline OuterResult outer_optimize(const PenalizedProblem& P, const Eigen::VectorXd& rho0,
                                  const Eigen::VectorXd& beta0, const OuterOptions& opt = {}) {
  detail::LamlObjective L(P, opt.inner);
  OuterResult out;
  Eigen::VectorXd rho = detail::clamp_rho(rho0);
  auto cur = L.full(rho, beta0);
  if (!std::isfinite(cur.value)) {
    throw FitError("inner iterations failed at the initial smoothing parameters: " + cur.inner.message);
  }
  out.laml_initial = cur.value;
  const Eigen::Index K = rho.size();
  auto finish = [&](bool converged, std::string msg) {
    out.rho = rho;
    out.laml = cur.value;
    out.inner = cur.inner;
    out.converged = converged;
    out.message = std::move(msg);
    out.evaluations = L.evaluations;
    return out;
  };
  if (K == 0) {
    out.gradient.resize(0);
    return finish(true, "no smoothing parameters");
  }

  auto gradient = [&](const Eigen::VectorXd& r, const LamlResult& at) {
    out.evaluations += 2 * static_cast<int>(K);
    return laml_gradient(P, r, at.inner.beta, opt.fd_step, opt.inner, at.value);
  };
  auto fd_hessian = [&](const Eigen::VectorXd& r, const LamlResult& at) {
    const double h = opt.fd_hessian_step;
    Eigen::MatrixXd H(K, K);
    auto f = [&](Eigen::VectorXd x) { return L(x, at.inner.beta); };
    for (Eigen::Index i = 0; i < K; ++i) {
      Eigen::VectorXd a = r, b = r;
      a(i) += h;
      b(i) -= h;
      H(i, i) = (f(a) - 2.0 * at.value + f(b)) / (h * h);
      for (Eigen::Index j = 0; j < i; ++j) {
        Eigen::VectorXd pp = r, pm = r, mp = r, mm = r;
        pp(i) += h, pp(j) += h;
        pm(i) += h, pm(j) -= h;
        mp(i) -= h, mp(j) += h;
        mm(i) -= h, mm(j) -= h;
        H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
      }
    }
    return H;
  };

  Eigen::VectorXd g = gradient(rho, cur);
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(K, K);  // inverse Hessian approximation
  bool fresh = true;
  std::string msg = "iteration limit reached";
  bool converged = false;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    out.iterations = iter;
    const Eigen::VectorXd pg = detail::project(g, rho);
    if (opt.trace >= 1) {
      std::clog << "outer " << iter << "  laml " << cur.value << "  |grad| " << pg.lpNorm<Eigen::Infinity>()
                << "  rho " << rho.transpose() << '\n';
    }
    if (pg.lpNorm<Eigen::Infinity>() < 1e-5) {
      converged = true;
      msg = "gradient below tolerance";
      break;
    }
    if (opt.method == OuterMethod::newton) {
      const Eigen::MatrixXd H = fd_hessian(rho, cur);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (H + H.transpose()));
      Eigen::VectorXd ev = eig.eigenvalues().cwiseAbs();
      const double floor = std::max(1e-6 * ev.maxCoeff(), 1e-8);
      ev = ev.cwiseMax(floor);
      B = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    }
    Eigen::VectorXd dir = -(B * pg);
    dir = detail::project(-dir, rho) * -1.0;
    if (!(dir.dot(pg) < 0.0)) {
      dir = -pg;
      B.setIdentity();
      fresh = true;
    }
    const double dmax = dir.lpNorm<Eigen::Infinity>();
    if (dmax > opt.max_step) dir *= opt.max_step / dmax;

    double alpha = 1.0;
    bool accepted = false;
    LamlResult next;
    Eigen::VectorXd rn;
    for (int h = 0; h < 30; ++h, alpha *= 0.5) {
      rn = detail::clamp_rho(rho + alpha * dir);
      if ((rn - rho).lpNorm<Eigen::Infinity>() == 0.0) break;
      next = L.full(rn, cur.inner.beta);
      if (std::isfinite(next.value) && next.value <= cur.value + 1e-4 * g.dot(rn - rho)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!fresh && opt.method != OuterMethod::newton) {
        B.setIdentity();
        fresh = true;
        continue;
      }
      converged = pg.lpNorm<Eigen::Infinity>() < 1e-3;
      msg = converged ? "no further decrease in the restricted likelihood"
                      : "line search failed to decrease the restricted likelihood";
      break;
    }
    const Eigen::VectorXd s = rn - rho;
    const double dL = cur.value - next.value;
    const Eigen::VectorXd gn = gradient(rn, next);
    const Eigen::VectorXd y = gn - g;
    rho = rn;
    cur = std::move(next);
    g = gn;
    const double sy = s.dot(y);
    if (opt.method != OuterMethod::newton && sy > 1e-10 * s.norm() * y.norm()) {
      if (fresh) B = (sy / y.squaredNorm()) * Eigen::MatrixXd::Identity(K, K);
      const double r = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(K, K);
      B = (I - r * s * y.transpose()) * B * (I - r * y * s.transpose()) + r * s * s.transpose();
      fresh = false;
    }
    const double pgn = detail::project(g, rho).lpNorm<Eigen::Infinity>();
    if (std::abs(dL) < 1e-7 * (1.0 + std::abs(cur.value)) && s.lpNorm<Eigen::Infinity>() < 1e-4 && pgn < 1e-3) {
      converged = true;
      msg = "restricted likelihood and smoothing parameters converged";
      break;
    }
  }
  out.gradient = g;
  return finish(converged, msg);
}

// ---------------------------------------------------------------------------
// Fitted model

struct FitDiagnostics {
  std::size_t n_input = 0;
  std::size_t n_missing = 0;
  std::size_t n_used = 0;
  std::size_t n_basis = 0;
  std::size_t n_terms = 0;  // likelihood terms (groups for pp)
  bool subsampled = false;
  std::string outer_method;
  int outer_iterations = 0;
  int laml_evaluations = 0;
  bool outer_converged = false;
  std::string outer_message;
  double laml_initial = kNaN;
  Eigen::VectorXd laml_gradient;
  int inner_iterations = 0;
  bool inner_converged = false;
  double inner_gradient = kNaN;  // max |penalized gradient| at the estimate
  double ridge = 0.0;            // added to H_p before inversion
  std::vector<std::string> warnings;
};

struct FittedModel {
  ModelSpec spec;
  ModelDesign design;
  Eigen::VectorXd beta;
  Eigen::VectorXd rho;
  Eigen::MatrixXd V;    // H_p^{-1}
  Eigen::VectorXd edf;  // per coefficient, diag(H_p^{-1} H)
  double loglik = kNaN;
  double laml = kNaN;
  FitDiagnostics diagnostics;

  int n_params() const { return static_cast<int>(design.params.size()); }

  Eigen::VectorXd lambda() const { return rho.array().exp(); }

  Eigen::VectorXd coefficients(int p) const {
    return beta.segment(design.param_start[p], design.params[p].ncol);
  }

  double term_edf(int p, int t) const {
    return edf.segment(design.term_start(p, t), design.params[p].terms[t].dim()).sum();
  }

  double total_edf() const { return edf.sum(); }
};

namespace detail {

inline double quantile_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  return {m, sd > 0.0 ? sd : 1.0};
}

// Representative response values (censored intervals reduced to a point).
inline std::vector<double> response_points(const ResponseData& r) {
  std::vector<double> y;
  if (r.family == Family::pp) {
    for (const auto& g : r.groups) y.insert(y.end(), g.values.begin(), g.values.end());
    return y;
  }
  for (Eigen::Index i = 0; i < r.lower.size(); ++i) {
    const double a = r.lower(i);
    const double b = r.upper(i);
    if (std::isfinite(a) && std::isfinite(b)) {
      y.push_back(0.5 * (a + b));
    } else if (std::isfinite(a)) {
      y.push_back(a);
    } else if (std::isfinite(b)) {
      y.push_back(b);
    }
  }
  if (y.empty()) throw DataError("no finite response values");
  return y;
}

// Method-of-moments starting values for the intercepts, on the link scale.
inline std::vector<double> moment_intercepts(const ResponseData& r) {
  const auto y = response_points(r);
  const auto [m, sd] = mean_sd(y);
  switch (r.family) {
    case Family::gev: {
      const double psi = sd * std::sqrt(6.0) / M_PI;
      return {m - 0.57722 * psi, std::log(psi), 0.05};
    }
    case Family::pp: {
      // top values above a threshold u are roughly exponential with scale psi;
      // r exceedances in ny periods put the annual-maximum location at
      // u + psi log(r / ny)
      double u = 0.0, rbar = 0.0, ny = 0.0;
      for (const auto& g : r.groups) {
        u += g.values.back();
        rbar += g.values.size();
        ny += g.ny;
      }
      const double k = static_cast<double>(r.groups.size());
      return {u / k + sd * std::log(rbar / ny), std::log(sd), 0.05};
    }
    case Family::gpd: return {std::log(std::max(m, 1e-8)), 0.05};
    case Family::ald: {
      const double u = quantile_type7(y, r.args.tau);
      double loss = 0.0;
      for (double x : y) loss += kernel::check_function(x - u, r.args.tau);
      loss /= y.size();
      return {u, std::log(loss > 0.0 ? loss : 1.0)};
    }
    case Family::gauss: return {m, std::log(sd)};
    case Family::exponential: return {-std::log(std::max(m, 1e-8))};
  }
  return {};
}

inline ModelDesign intercept_only(const ModelDesign& full) {
  ModelDesign d;
  for (const auto& p : full.params) {
    ParameterDesign q;
    q.name = p.name;
    q.terms.push_back(p.terms.front());
    q.start = {0};
    q.ncol = 1;
    d.params.push_back(std::move(q));
  }
  index_penalties(d);
  return d;
}

}  // namespace detail

// Starting coefficients: explicit inits, else an intercept-only fit started at
// moment estimates, with every other coefficient zero.
inline Eigen::VectorXd initial_coefficients(const ModelSpec& spec, const PreparedData& prep,
                                            const ModelDesign& design, std::vector<std::string>& warnings,
                                            const InnerOptions& inner = {}) {
  const int J = static_cast<int>(design.params.size());
  const auto& inits = spec.options.inits;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.ncoef);
  if (static_cast<int>(inits.size()) == design.ncoef && design.ncoef != J) {
    return Eigen::Map<const Eigen::VectorXd>(inits.data(), design.ncoef);
  }
  if (!inits.empty() && static_cast<int>(inits.size()) != J) {
    throw SpecError("options.inits needs " + std::to_string(J) + " (one per parameter) or " +
                    std::to_string(design.ncoef) + " (one per coefficient) values");
  }
  Eigen::VectorXd b0(J);
  if (!inits.empty()) {
    for (int p = 0; p < J; ++p) b0(p) = inits[p];
  } else {
    const auto mom = detail::moment_intercepts(prep.response);
    for (int p = 0; p < J; ++p) b0(p) = mom[p];
    const ModelDesign d0 = detail::intercept_only(design);
    const PenalizedProblem P0(d0, prep.design_data, prep.response);
    const Eigen::MatrixXd S0 = Eigen::MatrixXd::Zero(J, J);
    // a zero-shape start has unbounded support and rescues bounded-tail data
    const bool has_shape = spec.family == Family::gev || spec.family == Family::pp || spec.family == Family::gpd;
    if (has_shape && !std::isfinite(P0.negloglik(b0))) b0(J - 1) = 0.0;
    auto r = inner_newton(P0, S0, b0, inner);
    if (r.converged) {
      b0 = r.beta;
    } else {
      warnings.push_back("intercept-only starting fit did not converge (" + r.message + "); using moment estimates");
    }
  }
  for (int p = 0; p < J; ++p) beta(design.param_start[p]) = b0(p);
  return beta;
}

inline Eigen::VectorXd initial_rho(const ModelSpec& spec, int K) {
  const auto& r0 = spec.options.rho0;
  Eigen::VectorXd rho(K);
  if (r0.size() == 1) {
    rho.setConstant(r0[0]);
  } else if (static_cast<int>(r0.size()) == K) {
    for (int k = 0; k < K; ++k) rho(k) = r0[k];
  } else {
    throw SpecError("options.rho0 needs 1 or " + std::to_string(K) + " values");
  }
  if (!rho.allFinite()) throw SpecError("options.rho0 must be finite");
  return rho;
}

// Assembles the fitted model from the final inner result.
inline FittedModel finalize_fit(const ModelSpec& spec, ModelDesign design, const OuterResult& outer) {
  FittedModel m;
  m.spec = spec;
  m.design = std::move(design);
  m.beta = outer.inner.beta;
  m.rho = outer.rho;
  Eigen::LLT<Eigen::MatrixXd> llt;
  m.diagnostics.ridge = ridged_llt(outer.inner.Hp, llt);
  const Eigen::Index P = m.beta.size();
  m.V = llt.solve(Eigen::MatrixXd::Identity(P, P));
  m.V = 0.5 * (m.V + m.V.transpose()).eval();
  m.edf = (m.V * outer.inner.H).diagonal();
  m.loglik = -outer.inner.nll;
  m.laml = outer.laml;
  auto& d = m.diagnostics;
  d.outer_method = to_string(spec.options.outer);
  d.outer_iterations = outer.iterations;
  d.laml_evaluations = outer.evaluations;
  d.outer_converged = outer.converged;
  d.outer_message = outer.message;
  d.laml_initial = outer.laml_initial;
  d.laml_gradient = outer.gradient;
  d.inner_iterations = outer.inner.iterations;
  d.inner_converged = outer.inner.converged;
  d.inner_gradient = outer.inner.grad.lpNorm<Eigen::Infinity>();
  return m;
}

inline FittedModel fit(const ModelSpec& spec, const DataTable& data) {
  auto prep = prepare_data(spec, data);
  ModelDesign design = assemble_design(spec, prep.basis_data);
  const PenalizedProblem P(design, prep.design_data, prep.response);
  InnerOptions inner;
  inner.trace = spec.options.trace;
  std::vector<std::string> warnings = prep.warnings;
  const Eigen::VectorXd beta0 = initial_coefficients(spec, prep, design, warnings, inner);
  OuterOptions oo;
  oo.method = spec.options.outer;
  oo.trace = spec.options.trace;
  oo.inner = inner;
  const auto outer = outer_optimize(P, initial_rho(spec, P.npenalties()), beta0, oo);
  if (!outer.converged) warnings.push_back("smoothing parameter selection: " + outer.message);
  FittedModel m = finalize_fit(spec, std::move(design), outer);
  auto& d = m.diagnostics;
  d.n_input = prep.n_input;
  d.n_missing = prep.n_missing;
  d.n_used = prep.n_used;
  d.n_basis = prep.n_basis;
  d.n_terms = static_cast<std::size_t>(prep.response.rows());
  d.subsampled = prep.subsampled;
  if (d.ridge > 0.0) warnings.push_back("penalized Hessian needed a ridge of " + format_number(d.ridge));
  d.warnings = std::move(warnings);
  return m;
}

}  // namespace evsmooth
