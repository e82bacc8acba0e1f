#pragma once

// Family log-likelihood over all observations as a function of the matrix of
// linear predictors (one column per distribution parameter), with derivatives
// of the negative log-likelihood per observation.

#include "evsmooth/families.hpp"

#include <Eigen/Dense>

#include <vector>

namespace evsmooth {

struct ResponseData {
  Family family = Family::gev;
  FamilyArgs args;
  Eigen::VectorXd lower;  // lower == upper for exact observations
  Eigen::VectorXd upper;
  std::vector<RLargestData> groups;  // pp only; one row of eta per group

  Eigen::Index rows() const {
    return family == Family::pp ? static_cast<Eigen::Index>(groups.size()) : lower.size();
  }
  bool any_censored() const { return (lower.array() != upper.array()).any(); }
};

struct LikelihoodEval {
  double negloglik = kInf;
  bool feasible = false;
  Eigen::MatrixXd grad;  // rows x J, d(-loglik_i)/d eta_ij
  Eigen::MatrixXd hess;  // rows x J*J, row-major J x J per observation
};

namespace detail {

template <class K>
LikelihoodEval evaluate_kernel(const ResponseData& r, const Eigen::MatrixXd& eta, bool derivs) {
  constexpr int N = K::N;
  const Eigen::Index n = r.rows();
  LikelihoodEval out;
  if (derivs) {
    out.grad.resize(n, N);
    out.hess.resize(n, N * N);
  }
  double total = 0.0;
  double e[N];
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < N; ++j) e[j] = eta(i, j);
    const double lo = r.lower(i);
    const double hi = r.upper(i);
    if (!derivs && lo == hi) {
      const auto v = K::template logpdf<double>(lo, e, r.args);
      if (!v || !std::isfinite(*v)) return out;
      total -= *v;
      continue;
    }
    const auto term = kernel::interval_term<K>(lo, hi, e, r.args);
    if (!term.in_support) return out;
    total -= term.value;
    if (derivs) {
      out.grad.row(i) = -term.grad.transpose();
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) out.hess(i, a * N + b) = -term.hess(a, b);
    }
  }
  out.negloglik = total;
  out.feasible = std::isfinite(total);
  return out;
}

inline LikelihoodEval evaluate_pp(const ResponseData& r, const Eigen::MatrixXd& eta, bool derivs) {
  const Eigen::Index n = r.rows();
  LikelihoodEval out;
  if (derivs) {
    out.grad.resize(n, 3);
    out.hess.resize(n, 9);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e[3] = {eta(i, 0), eta(i, 1), eta(i, 2)};
    if (!derivs) {
      const auto v = kernel::pp_group_negloglik<double>(r.groups[i], e);
      if (!v || !std::isfinite(*v)) return out;
      total += *v;
      continue;
    }
    const auto x = kernel::make_duals<kernel::Gev>(e);
    const auto d = kernel::from_dual<3>(kernel::pp_group_negloglik(r.groups[i], x.data()));
    if (!d.in_support) return out;
    total += d.value;
    out.grad.row(i) = d.grad.transpose();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) out.hess(i, a * 3 + b) = d.hess(a, b);
  }
  out.negloglik = total;
  out.feasible = std::isfinite(total);
  return out;
}

}  // namespace detail

inline LikelihoodEval evaluate_likelihood(const ResponseData& r, const Eigen::MatrixXd& eta, bool derivs = true) {
  switch (r.family) {
    case Family::gev: return detail::evaluate_kernel<kernel::Gev>(r, eta, derivs);
    case Family::gpd: return detail::evaluate_kernel<kernel::Gpd>(r, eta, derivs);
    case Family::ald: return detail::evaluate_kernel<kernel::Ald>(r, eta, derivs);
    case Family::gauss: return detail::evaluate_kernel<kernel::Gauss>(r, eta, derivs);
    case Family::exponential: return detail::evaluate_kernel<kernel::Exponential>(r, eta, derivs);
    case Family::pp: return detail::evaluate_pp(r, eta, derivs);
  }
  return {};
}

}  // namespace evsmooth
