#pragma once

// Return levels. p is always a non-exceedance probability: p = 0.99 gives
// the level exceeded by the annual maximum once per 100 years on average.

#include "evsmooth/error.hpp"
#include "evsmooth/families.hpp"
#include "evsmooth/table.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace evsmooth {

namespace detail {

inline void check_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("probability must lie in (0, 1)");
}

// (exp(a xi) - 1) / xi and its derivative in xi, with the xi -> 0 limit.
inline std::pair<double, double> expm1_ratio(double a, double xi) {
  if (std::abs(xi) < kShapeZeroTolerance) {
    return {a + xi * a * a / 2.0 + xi * xi * a * a * a / 6.0, a * a / 2.0 + xi * a * a * a / 3.0};
  }
  const double e = std::expm1(a * xi);
  return {e / xi, (a * (e + 1.0)) / xi - e / (xi * xi)};
}

}  // namespace detail

struct ReturnLevel {
  double value = kNaN;
  std::array<double, 3> grad = {0.0, 0.0, 0.0};  // w.r.t. the linked parameters
};

// GEV quantile at log non-exceedance probability log_p, with its gradient in
// (location, log scale, shape).
inline ReturnLevel gev_return_level_logp(double location, double log_scale, double shape, double log_p) {
  const double psi = std::exp(log_scale);
  const double L = std::log(-log_p);
  // z = mu + psi (y^-xi - 1) / xi with y = -log p, i.e. a = -L
  const auto [r, dr] = detail::expm1_ratio(-L, shape);
  ReturnLevel out;
  out.value = location + psi * r;
  out.grad = {1.0, psi * r, psi * dr};
  return out;
}

inline ReturnLevel gev_return_level_linked(double location, double log_scale, double shape, double p) {
  detail::check_probability(p);
  return gev_return_level_logp(location, log_scale, shape, std::log(p));
}

inline double gev_return_level(const GevParams& params, double p) {
  if (!(params.scale > 0.0)) throw DomainError("GEV scale must be positive");
  return gev_return_level_linked(params.location, std::log(params.scale), params.shape, p).value;
}

// GPD return level for threshold u with m excess opportunities per period,
// exceedance probability zeta and extremal index theta:
// u + psi/xi [(m zeta theta / (1 - p))^xi - 1]. Gradient in (log scale, shape)
// occupies grad[0], grad[1].
inline ReturnLevel gpd_return_level_linked(double u, double log_scale, double shape, double m, double zeta,
                                           double theta, double p) {
  detail::check_probability(p);
  if (!(m > 0.0)) throw DomainError("m must be positive");
  if (!(zeta > 0.0 && zeta <= 1.0)) throw DomainError("zeta must lie in (0, 1]");
  if (!(theta > 0.0 && theta <= 1.0)) throw DomainError("theta must lie in (0, 1]");
  const double ratio = m * zeta * theta / (1.0 - p);
  if (!(ratio >= 1.0)) throw DomainError("return level below threshold (m zeta theta / (1 - p) < 1)");
  const double psi = std::exp(log_scale);
  const auto [r, dr] = detail::expm1_ratio(std::log(ratio), shape);
  ReturnLevel out;
  out.value = u + psi * r;
  out.grad = {psi * r, psi * dr, 0.0};
  return out;
}

inline double gpd_return_level(double u, double scale, double shape, double m, double zeta, double theta,
                               double p) {
  if (!(scale > 0.0)) throw DomainError("GPD scale must be positive");
  return gpd_return_level_linked(u, std::log(scale), shape, m, zeta, theta, p).value;
}

// ---------------------------------------------------------------------------
// Composite annual distribution

struct ReturnLevelQuery {
  double p = 0.99;
  Family family = Family::gev;  // gev (also pp) or gpd
  std::vector<double> location;  // threshold u for gpd
  std::vector<double> scale;
  std::vector<double> shape;
  double m = 1.0;
  std::vector<double> alpha;  // empty: 1/k for each of k rows
  double theta = 1.0;
  double tau = 0.0;  // 1 - zeta, gpd only
};

namespace detail {

inline double gev_log_cdf(double z, double mu, double psi, double xi) {
  const double s = (z - mu) / psi;
  if (std::abs(xi) < kShapeZeroTolerance) return -std::exp(-s);
  const double w = 1.0 + xi * s;
  if (!(w > 0.0)) return xi > 0.0 ? -kInf : 0.0;
  return -std::exp(-std::log(w) / xi);
}

// log of the unconditional CDF 1 - zeta (1 - F_u(z - u)), floored at 1 - zeta
// below the threshold.
inline double gpd_log_cdf(double z, double u, double psi, double xi, double zeta) {
  const double y = z - u;
  if (!(y > 0.0)) return std::log1p(-zeta);
  double log_sf;
  if (std::abs(xi) < kShapeZeroTolerance) {
    log_sf = -y / psi;
  } else {
    const double w = 1.0 + xi * y / psi;
    if (!(w > 0.0)) return 0.0;  // beyond the upper endpoint
    log_sf = -std::log(w) / xi;
  }
  return std::log1p(-zeta * std::exp(log_sf));
}

struct PreparedQuery {
  std::size_t k = 0;
  std::vector<double> exponent;  // m alpha_j theta_eff
  double zeta = 1.0;
};

inline PreparedQuery prepare_query(const ReturnLevelQuery& q) {
  if (q.family != Family::gev && q.family != Family::pp && q.family != Family::gpd) {
    throw DomainError("return levels need family gev, pp or gpd");
  }
  PreparedQuery out;
  out.k = q.location.size();
  if (out.k == 0) throw DomainError("no parameter rows");
  if (q.scale.size() != out.k || q.shape.size() != out.k) throw DomainError("parameter vectors differ in length");
  if (!q.alpha.empty() && q.alpha.size() != out.k) throw DomainError("alpha length does not match parameter rows");
  if (!(q.m > 0.0)) throw DomainError("m must be positive");
  if (!(q.theta > 0.0 && q.theta <= 1.0)) throw DomainError("theta must lie in (0, 1]");
  if (!(q.tau >= 0.0 && q.tau < 1.0)) throw DomainError("tau must lie in [0, 1)");
  for (std::size_t j = 0; j < out.k; ++j) {
    if (!(q.scale[j] > 0.0)) throw DomainError("scale parameters must be positive");
    if (!std::isfinite(q.location[j]) || !std::isfinite(q.shape[j])) throw DomainError("non-finite parameters");
  }
  const double theta_eff = q.family == Family::gpd ? q.theta : 1.0;
  out.exponent.resize(out.k);
  for (std::size_t j = 0; j < out.k; ++j) {
    const double a = q.alpha.empty() ? 1.0 / static_cast<double>(out.k) : q.alpha[j];
    if (!(a >= 0.0)) throw DomainError("alpha must be non-negative");
    out.exponent[j] = q.m * a * theta_eff;
  }
  out.zeta = 1.0 - q.tau;
  return out;
}

inline double composite_log_cdf(double z, const ReturnLevelQuery& q, const PreparedQuery& pq) {
  double total = 0.0;
  for (std::size_t j = 0; j < pq.k; ++j) {
    if (pq.exponent[j] == 0.0) continue;
    const double lf = q.family == Family::gpd ? gpd_log_cdf(z, q.location[j], q.scale[j], q.shape[j], pq.zeta)
                                              : gev_log_cdf(z, q.location[j], q.scale[j], q.shape[j]);
    if (lf == -kInf) return -kInf;
    total += pq.exponent[j] * lf;
  }
  return total;
}

// Row quantile at per-row log probability log_r.
inline double row_quantile(const ReturnLevelQuery& q, const PreparedQuery& pq, std::size_t j, double log_r) {
  if (q.family != Family::gpd) {
    return gev_return_level_logp(q.location[j], std::log(q.scale[j]), q.shape[j], log_r).value;
  }
  const double sf = -std::expm1(log_r) / pq.zeta;
  if (sf >= 1.0) return q.location[j];
  return q.location[j] + q.scale[j] * expm1_ratio(-std::log(sf), q.shape[j]).first;
}

}  // namespace detail

// F_ann(z) = prod_j F_j(z)^(m alpha_j theta_eff), theta_eff = theta for gpd and 1 for gev.
inline double composite_annual_cdf(double z, const ReturnLevelQuery& q) {
  const auto pq = detail::prepare_query(q);
  return std::exp(detail::composite_log_cdf(z, q, pq));
}

// Solves F_ann(z) = p.
inline double qev(const ReturnLevelQuery& q) {
  detail::check_probability(q.p);
  const auto pq = detail::prepare_query(q);
  double total = 0.0;
  for (double e : pq.exponent) total += e;
  if (!(total > 0.0)) throw DomainError("weights give a zero total exponent");
  const double log_r = std::log(q.p) / total;  // per-row probability p^(1/total)

  bool identical = true;
  for (std::size_t j = 1; j < pq.k && identical; ++j) {
    identical = q.location[j] == q.location[0] && q.scale[j] == q.scale[0] && q.shape[j] == q.shape[0];
  }
  if (identical) {
    if (q.family == Family::gpd && -std::expm1(log_r) / pq.zeta >= 1.0) {
      throw DomainError("return level below threshold");
    }
    return detail::row_quantile(q, pq, 0, log_r);
  }

  auto F = [&](double z) { return std::exp(detail::composite_log_cdf(z, q, pq)); };
  double lo = kInf, hi = -kInf;
  for (std::size_t j = 0; j < pq.k; ++j) {
    const double zj = detail::row_quantile(q, pq, j, log_r);
    lo = std::min(lo, zj);
    hi = std::max(hi, zj);
  }
  double width = std::max(1.0, hi - lo);
  int expansions = 0;
  while (F(lo) > q.p) {
    if (++expansions > 200) throw DomainError("qev: cannot bracket the return level (below threshold?)");
    lo -= width;
    width *= 2.0;
  }
  width = std::max(1.0, hi - lo);
  while (F(hi) < q.p) {
    if (++expansions > 200) throw DomainError("qev: cannot bracket the return level");
    hi += width;
    width *= 2.0;
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double fm = F(mid);
    if (std::abs(fm - q.p) < 1e-9 && hi - lo < 1e-8 * (1.0 + std::abs(mid))) break;
    if (mid <= lo || mid >= hi) break;  // bracket exhausted at double precision
    (fm < q.p ? lo : hi) = mid;
  }
  return mid;
}

}  // namespace evsmooth
