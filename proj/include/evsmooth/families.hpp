#pragma once

// Log-densities, log-CDFs and their derivatives for the supported response
// distributions. Every derivative is taken with respect to the linked
// predictors (identity for location and shape, log for positive parameters),
// so the fitting code never needs family-specific chain rules.

#include "evsmooth/dual.hpp"
#include "evsmooth/error.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evsmooth {

// Below this |shape| the exponential-tail (Gumbel / exponential) limit is used.
inline constexpr double kShapeZeroTolerance = 1e-6;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Family { gev, gpd, pp, ald, gauss, exponential };

enum class Link { identity, log };

struct FamilyInfo {
  Family family;
  std::string name;
  std::vector<std::string> link_names;      // e.g. "logscale"
  std::vector<std::string> response_names;  // e.g. "scale"
  std::vector<Link> links;
  int n_params() const { return static_cast<int>(links.size()); }
};

inline const FamilyInfo& family_info(Family f) {
  using L = Link;
  static const std::array<FamilyInfo, 6> table = {{
      {Family::gev, "gev", {"location", "logscale", "shape"}, {"location", "scale", "shape"},
       {L::identity, L::log, L::identity}},
      {Family::gpd, "gpd", {"logscale", "shape"}, {"scale", "shape"}, {L::log, L::identity}},
      {Family::pp, "pp", {"location", "logscale", "shape"}, {"location", "scale", "shape"},
       {L::identity, L::log, L::identity}},
      {Family::ald, "ald", {"location", "logscale"}, {"location", "scale"}, {L::identity, L::log}},
      {Family::gauss, "gauss", {"location", "logscale"}, {"location", "scale"},
       {L::identity, L::log}},
      {Family::exponential, "exponential", {"lograte"}, {"rate"}, {L::log}},
  }};
  return table[static_cast<std::size_t>(f)];
}

inline Family parse_family(std::string_view name) {
  for (auto f : {Family::gev, Family::gpd, Family::pp, Family::ald, Family::gauss,
                 Family::exponential}) {
    if (family_info(f).name == name) return f;
  }
  throw SpecError("unknown family '" + std::string(name) + "'");
}

inline double inverse_link(Link link, double eta) { return link == Link::log ? std::exp(eta) : eta; }

struct GevParams {
  double location = 0.0;
  double scale = 1.0;
  double shape = 0.0;
};

struct GpdParams {
  double scale = 1.0;
  double shape = 0.0;
};

struct AldParams {
  double location = 0.0;
  double scale = 1.0;
  double tau = 0.5;
  double omega = 1e-3;  // half-width of the smoothed check function
};

struct GaussParams {
  double mean = 0.0;
  double sd = 1.0;
};

struct ExponentialParams {
  double rate = 1.0;
};

// Interval [lower, upper] known to contain the response. lower == upper is an
// exact observation.
struct CensoredResponse {
  double lower = 0.0;
  double upper = 0.0;
  bool exact() const { return lower == upper; }
};

// Top order statistics of one group for the point-process likelihood.
struct RLargestData {
  std::string id;
  std::vector<double> values;  // descending
  double ny = 1.0;             // observation periods represented by the group
};

// Fixed per-fit family arguments.
struct FamilyArgs {
  double tau = 0.5;
  double omega = 1e-3;
};

template <int N>
struct LogDensity {
  double value = -kInf;
  Eigen::Matrix<double, N, 1> grad = Eigen::Matrix<double, N, 1>::Zero();
  Eigen::Matrix<double, N, N> hess = Eigen::Matrix<double, N, N>::Zero();
  bool in_support = false;
};

namespace kernel {

using std::exp;
using std::log;
using std::log1p;
using std::expm1;

// log1p(xi * z) / xi, switching to its xi -> 0 expansion inside the tolerance.
// The expansion keeps exact first and second derivatives in xi at xi = 0.
template <class T>
T shape_transform(const T& z, const T& xi) {
  if (std::abs(value_of(xi)) < kShapeZeroTolerance) {
    const T x = xi * z;
    return z * (1.0 - 0.5 * x + x * x / 3.0 - x * x * x / 4.0);
  }
  return z * log1p_ratio(xi * z);
}

// log(1 - exp(a)) for a < 0.
template <class T>
T log1mexp(const T& a) {
  return log(-expm1(a));
}

struct Support {
  double lower = -kInf;
  double upper = kInf;
};

struct Gev {
  static constexpr int N = 3;
  static constexpr Family family = Family::gev;

  template <class T>
  static std::optional<T> t_value(double y, const T* eta) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    if (!(value_of(1.0 + eta[2] * z) > 0.0)) return std::nullopt;
    return shape_transform(z, eta[2]);
  }
  template <class T>
  static std::optional<T> logpdf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return -eta[1] - (1.0 + eta[2]) * (*t) - exp(-(*t));
  }
  template <class T>
  static std::optional<T> logcdf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return -exp(-(*t));
  }
  template <class T>
  static std::optional<T> logsf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return log1mexp(-exp(-(*t)));
  }
  static Support support(const double* eta, const FamilyArgs&) {
    const double xi = eta[2];
    if (std::abs(xi) < kShapeZeroTolerance) return {};
    const double edge = eta[0] - std::exp(eta[1]) / xi;
    return xi > 0 ? Support{edge, kInf} : Support{-kInf, edge};
  }
};

struct Gpd {
  static constexpr int N = 2;
  static constexpr Family family = Family::gpd;

  template <class T>
  static std::optional<T> t_value(double y, const T* eta) {
    if (!(y > 0.0)) return std::nullopt;
    const T z = y * exp(-eta[0]);
    if (!(value_of(1.0 + eta[1] * z) > 0.0)) return std::nullopt;
    return shape_transform(z, eta[1]);
  }
  template <class T>
  static std::optional<T> logpdf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return -eta[0] - (1.0 + eta[1]) * (*t);
  }
  template <class T>
  static std::optional<T> logcdf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return log1mexp(-(*t));
  }
  template <class T>
  static std::optional<T> logsf(double y, const T* eta, const FamilyArgs&) {
    auto t = t_value(y, eta);
    if (!t) return std::nullopt;
    return -(*t);
  }
  static Support support(const double* eta, const FamilyArgs&) {
    const double xi = eta[1];
    if (xi < -kShapeZeroTolerance) return {0.0, -std::exp(eta[0]) / xi};
    return {0.0, kInf};
  }
};

struct Gauss {
  static constexpr int N = 2;
  static constexpr Family family = Family::gauss;

  template <class T>
  static std::optional<T> logpdf(double y, const T* eta, const FamilyArgs&) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    return -0.5 * std::log(2.0 * M_PI) - eta[1] - 0.5 * z * z;
  }
  template <class T>
  static std::optional<T> logcdf(double y, const T* eta, const FamilyArgs&) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    if (!(value_of(normal_cdf(z)) > 0.0)) return std::nullopt;
    return log(normal_cdf(z));
  }
  template <class T>
  static std::optional<T> logsf(double y, const T* eta, const FamilyArgs&) {
    const T z = (eta[0] - y) * exp(-eta[1]);
    if (!(value_of(normal_cdf(z)) > 0.0)) return std::nullopt;
    return log(normal_cdf(z));
  }
  static Support support(const double*, const FamilyArgs&) { return {}; }
};

// Parameterized by its log rate.
struct Exponential {
  static constexpr int N = 1;
  static constexpr Family family = Family::exponential;

  template <class T>
  static std::optional<T> logpdf(double y, const T* eta, const FamilyArgs&) {
    if (y < 0.0) return std::nullopt;
    return eta[0] - exp(eta[0]) * y;
  }
  template <class T>
  static std::optional<T> logcdf(double y, const T* eta, const FamilyArgs&) {
    if (!(y > 0.0)) return std::nullopt;
    return log1mexp(-exp(eta[0]) * y);
  }
  template <class T>
  static std::optional<T> logsf(double y, const T* eta, const FamilyArgs&) {
    if (y < 0.0) return std::nullopt;
    return -exp(eta[0]) * y;
  }
  static Support support(const double*, const FamilyArgs&) { return {0.0, kInf}; }
};

// Smoothed check function tau * z + omega * log(1 + exp(-z / omega)); it
// tends to the quantile check function as omega -> 0.
template <class T>
T smooth_check(const T& z, double tau, double omega) {
  return tau * z + omega * softplus(-z / omega);
}

inline double check_function(double z, double tau) { return z * (tau - (z < 0.0 ? 1.0 : 0.0)); }

struct Ald {
  static constexpr int N = 2;
  static constexpr Family family = Family::ald;

  template <class T>
  static std::optional<T> logpdf(double y, const T* eta, const FamilyArgs& a) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    return std::log(a.tau) + std::log1p(-a.tau) - eta[1] - smooth_check(z, a.tau, a.omega);
  }
  // Interval probabilities use the unsmoothed asymmetric Laplace CDF.
  template <class T>
  static std::optional<T> logcdf(double y, const T* eta, const FamilyArgs& a) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    if (value_of(z) <= 0.0) return std::log(a.tau) + (1.0 - a.tau) * z;
    return log1p(-(1.0 - a.tau) * exp(-a.tau * z));
  }
  template <class T>
  static std::optional<T> logsf(double y, const T* eta, const FamilyArgs& a) {
    const T z = (y - eta[0]) * exp(-eta[1]);
    if (value_of(z) <= 0.0) return log1p(-a.tau * exp((1.0 - a.tau) * z));
    return std::log1p(-a.tau) - a.tau * z;
  }
  static Support support(const double*, const FamilyArgs&) { return {}; }
};

template <class K>
std::array<Dual2<K::N>, K::N> make_duals(const double* eta) {
  std::array<Dual2<K::N>, K::N> d;
  for (int j = 0; j < K::N; ++j) d[j] = Dual2<K::N>::variable(eta[j], j);
  return d;
}

template <int N>
LogDensity<N> from_dual(const std::optional<Dual2<N>>& d) {
  LogDensity<N> out;
  if (!d || !std::isfinite(d->v)) return out;
  out.value = d->v;
  out.grad = d->g;
  out.hess = d->h;
  out.in_support = true;
  return out;
}

// Log-likelihood contribution of a response known to lie in [lo, hi];
// lo == hi is an exact observation and uses the log-density.
template <class K>
LogDensity<K::N> interval_term(double lo, double hi, const double* eta, const FamilyArgs& args) {
  using D = Dual2<K::N>;
  const auto x = make_duals<K>(eta);
  if (lo == hi) return from_dual<K::N>(K::logpdf(lo, x.data(), args));
  if (!(lo < hi)) return {};

  const Support s = K::support(eta, args);
  enum Where { below, inside, above };
  auto where = [&](double y) { return y <= s.lower ? below : (y >= s.upper ? above : inside); };
  const Where wl = where(lo);
  const Where wh = where(hi);

  if (wl == below && wh == above) {
    LogDensity<K::N> out;
    out.value = 0.0;
    out.in_support = true;
    return out;
  }
  if (wl == wh && wl != inside) return {};
  if (wl == below) return from_dual<K::N>(K::logcdf(hi, x.data(), args));
  if (wh == above) return from_dual<K::N>(K::logsf(lo, x.data(), args));

  const auto flo = K::logcdf(lo, x.data(), args);
  const auto fhi = K::logcdf(hi, x.data(), args);
  const auto slo = K::logsf(lo, x.data(), args);
  const auto shi = K::logsf(hi, x.data(), args);
  if (!flo || !fhi || !slo || !shi) return {};
  std::optional<D> result;
  // Subtract on whichever tail keeps the two terms away from 1.
  if (flo->v > std::log(0.5)) {
    const D diff = *shi - *slo;
    if (!(diff.v < 0.0)) return {};
    result = *slo + log1mexp(diff);
  } else {
    const D diff = *flo - *fhi;
    if (!(diff.v < 0.0)) return {};
    result = *fhi + log1mexp(diff);
  }
  return from_dual<K::N>(result);
}

// Negative log-likelihood of one group's r largest values under the
// point-process representation, in terms of (location, log scale, shape).
template <class T>
std::optional<T> pp_group_negloglik(const RLargestData& group, const T* eta) {
  if (group.values.empty()) return std::nullopt;
  T total(0.0);
  for (double y : group.values) {
    auto t = Gev::t_value(y, eta);
    if (!t) return std::nullopt;
    total += eta[1] + (1.0 + eta[2]) * (*t);
  }
  auto t_r = Gev::t_value(group.values.back(), eta);
  total += group.ny * exp(-(*t_r));
  return total;
}

}  // namespace kernel

inline std::array<double, 3> gev_linked(const GevParams& p) {
  if (!(p.scale > 0.0)) throw DomainError("GEV scale must be positive");
  return {p.location, std::log(p.scale), p.shape};
}

// Derivatives are with respect to (location, log scale, shape).
inline LogDensity<3> gev_logpdf_and_derivs(double y, const GevParams& p) {
  const auto eta = gev_linked(p);
  return kernel::interval_term<kernel::Gev>(y, y, eta.data(), {});
}

// Derivatives are with respect to (log scale, shape).
inline LogDensity<2> gpd_logpdf_and_derivs(double y, const GpdParams& p) {
  if (!(p.scale > 0.0)) throw DomainError("GPD scale must be positive");
  const std::array<double, 2> eta = {std::log(p.scale), p.shape};
  return kernel::interval_term<kernel::Gpd>(y, y, eta.data(), {});
}

// Derivatives are with respect to (location, log scale).
inline LogDensity<2> ald_logpdf_and_derivs(double y, const AldParams& p) {
  if (!(p.scale > 0.0)) throw DomainError("ALD scale must be positive");
  if (!(p.tau > 0.0 && p.tau < 1.0)) throw DomainError("ALD tau must lie in (0, 1)");
  if (!(p.omega > 0.0)) throw DomainError("ALD omega must be positive");
  const std::array<double, 2> eta = {p.location, std::log(p.scale)};
  return kernel::interval_term<kernel::Ald>(y, y, eta.data(), {p.tau, p.omega});
}

// Derivatives are with respect to (mean, log sd).
inline LogDensity<2> gauss_logpdf_and_derivs(double y, const GaussParams& p) {
  if (!(p.sd > 0.0)) throw DomainError("Gaussian sd must be positive");
  const std::array<double, 2> eta = {p.mean, std::log(p.sd)};
  return kernel::interval_term<kernel::Gauss>(y, y, eta.data(), {});
}

// Derivative is with respect to the log rate.
inline LogDensity<1> exponential_logpdf_and_derivs(double y, const ExponentialParams& p) {
  if (!(p.rate > 0.0)) throw DomainError("exponential rate must be positive");
  const std::array<double, 1> eta = {std::log(p.rate)};
  return kernel::interval_term<kernel::Exponential>(y, y, eta.data(), {});
}

// Negated point-process log-likelihood of one group. `value` holds the
// negative log-likelihood and grad/hess are its derivatives.
inline LogDensity<3> pp_group_negloglik(const RLargestData& group, const GevParams& p) {
  if (!(group.ny > 0.0)) throw DomainError("pp group observation count must be positive");
  const auto eta = gev_linked(p);
  const auto x = kernel::make_duals<kernel::Gev>(eta.data());
  return kernel::from_dual<3>(kernel::pp_group_negloglik(group, x.data()));
}

// log[F(upper) - F(lower)] for any non-point-process family, with linked
// parameters in `eta` (length = family parameter count). Degenerate intervals
// reduce to the log-density.
template <int N>
LogDensity<N> censored_loglik_term(const CensoredResponse& resp, Family family,
                                   const Eigen::Matrix<double, N, 1>& eta,
                                   const FamilyArgs& args = {}) {
  if (resp.lower > resp.upper) throw DomainError("censoring interval has lower > upper");
  const double* e = eta.data();
  auto run = [&](auto k) -> LogDensity<N> {
    using K = decltype(k);
    if constexpr (K::N == N) {
      return kernel::interval_term<K>(resp.lower, resp.upper, e, args);
    } else {
      throw DomainError("parameter vector length does not match family " +
                        family_info(family).name);
    }
  };
  switch (family) {
    case Family::gev:
      return run(kernel::Gev{});
    case Family::gpd:
      return run(kernel::Gpd{});
    case Family::ald:
      return run(kernel::Ald{});
    case Family::gauss:
      return run(kernel::Gauss{});
    case Family::exponential:
      return run(kernel::Exponential{});
    case Family::pp:
      break;
  }
  throw DomainError("interval censoring is not available for the pp family");
}

}  // namespace evsmooth
