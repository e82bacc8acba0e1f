#pragma once

// Second-order forward-mode differentiation over a fixed, small number of
// variables. A Dual2<N> carries a value together with its gradient and
// Hessian with respect to N independent inputs, so a log-density written
// once as a template yields exact first and second derivatives.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace evsmooth {

template <int N>
struct Dual2 {
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;

  double v = 0.0;
  Vec g = Vec::Zero();
  Mat h = Mat::Zero();

  Dual2() = default;
  Dual2(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual2(double value, const Vec& grad, const Mat& hess) : v(value), g(grad), h(hess) {}

  static Dual2 variable(double value, int index) {
    Dual2 d(value);
    d.g(index) = 1.0;
    return d;
  }

  Dual2& operator+=(const Dual2& o) {
    v += o.v;
    g += o.g;
    h += o.h;
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    v -= o.v;
    g -= o.g;
    h -= o.h;
    return *this;
  }
  Dual2& operator*=(const Dual2& o) {
    h = v * o.h + o.v * h + g * o.g.transpose() + o.g * g.transpose();
    g = v * o.g + o.v * g;
    v *= o.v;
    return *this;
  }
  Dual2& operator/=(const Dual2& o);
};

// Applies a scalar function with known first and second derivative.
template <int N>
Dual2<N> chain(const Dual2<N>& x, double f, double df, double d2f) {
  return Dual2<N>(f, df * x.g, df * x.h + d2f * (x.g * x.g.transpose()));
}

template <int N>
Dual2<N> operator-(const Dual2<N>& x) {
  return Dual2<N>(-x.v, -x.g, -x.h);
}
template <int N>
Dual2<N> operator+(Dual2<N> a, const Dual2<N>& b) {
  return a += b;
}
template <int N>
Dual2<N> operator-(Dual2<N> a, const Dual2<N>& b) {
  return a -= b;
}
template <int N>
Dual2<N> operator*(Dual2<N> a, const Dual2<N>& b) {
  return a *= b;
}
template <int N>
Dual2<N> operator+(Dual2<N> a, double b) {
  a.v += b;
  return a;
}
template <int N>
Dual2<N> operator+(double b, Dual2<N> a) {
  a.v += b;
  return a;
}
template <int N>
Dual2<N> operator-(Dual2<N> a, double b) {
  a.v -= b;
  return a;
}
template <int N>
Dual2<N> operator-(double b, const Dual2<N>& a) {
  return Dual2<N>(b - a.v, -a.g, -a.h);
}
template <int N>
Dual2<N> operator*(Dual2<N> a, double b) {
  a.v *= b;
  a.g *= b;
  a.h *= b;
  return a;
}
template <int N>
Dual2<N> operator*(double b, Dual2<N> a) {
  return a * b;
}
template <int N>
Dual2<N> operator/(const Dual2<N>& a, double b) {
  return a * (1.0 / b);
}
template <int N>
Dual2<N> inv(const Dual2<N>& x) {
  const double r = 1.0 / x.v;
  return chain(x, r, -r * r, 2.0 * r * r * r);
}
template <int N>
Dual2<N> operator/(const Dual2<N>& a, const Dual2<N>& b) {
  return a * inv(b);
}
template <int N>
Dual2<N> operator/(double a, const Dual2<N>& b) {
  return a * inv(b);
}
template <int N>
Dual2<N>& Dual2<N>::operator/=(const Dual2<N>& o) {
  *this = *this * inv(o);
  return *this;
}

template <int N>
bool operator<(const Dual2<N>& a, double b) {
  return a.v < b;
}
template <int N>
bool operator>(const Dual2<N>& a, double b) {
  return a.v > b;
}
template <int N>
bool operator<=(const Dual2<N>& a, double b) {
  return a.v <= b;
}

// Scalar overloads so the same templates work for plain doubles.
inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual2<N>& x) {
  return x.v;
}

template <int N>
Dual2<N> exp(const Dual2<N>& x) {
  const double e = std::exp(x.v);
  return chain(x, e, e, e);
}
template <int N>
Dual2<N> log(const Dual2<N>& x) {
  return chain(x, std::log(x.v), 1.0 / x.v, -1.0 / (x.v * x.v));
}
template <int N>
Dual2<N> log1p(const Dual2<N>& x) {
  const double r = 1.0 / (1.0 + x.v);
  return chain(x, std::log1p(x.v), r, -r * r);
}
template <int N>
Dual2<N> expm1(const Dual2<N>& x) {
  const double e = std::exp(x.v);
  return chain(x, std::expm1(x.v), e, e);
}
template <int N>
Dual2<N> sqrt(const Dual2<N>& x) {
  const double s = std::sqrt(x.v);
  return chain(x, s, 0.5 / s, -0.25 / (s * x.v));
}
template <int N>
Dual2<N> square(const Dual2<N>& x) {
  return chain(x, x.v * x.v, 2.0 * x.v, 2.0);
}
inline double square(double x) { return x * x; }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
template <int N>
Dual2<N> softplus(const Dual2<N>& x) {
  const double s = logistic(x.v);
  return chain(x, softplus(x.v), s, s * (1.0 - s));
}

// log1p(x) / x, continuous through x = 0.
inline double log1p_ratio(double x) {
  if (std::abs(x) < 1e-3) {
    double term = 1.0;
    double sum = 0.0;
    for (int n = 0; n < 9; ++n) {
      sum += term / (n + 1);
      term *= -x;
    }
    return sum;
  }
  return std::log1p(x) / x;
}
template <int N>
Dual2<N> log1p_ratio(const Dual2<N>& x) {
  const double a = x.v;
  double f, df, d2f;
  if (std::abs(a) < 1e-3) {
    // g(a) = sum (-a)^n / (n+1)
    f = df = d2f = 0.0;
    double pw = 1.0;  // a^n
    for (int n = 0; n < 10; ++n) {
      const double sgn = (n % 2 == 0) ? 1.0 : -1.0;
      f += sgn * pw / (n + 1);
      df += -sgn * (n + 1) * pw / (n + 2);
      d2f += sgn * (n + 1) * (n + 2) * pw / (n + 3);
      pw *= a;
    }
  } else {
    const double l = std::log1p(a);
    const double r = 1.0 / (1.0 + a);
    f = l / a;
    df = (a * r - l) / (a * a);
    d2f = (2.0 * l - a * r * (2.0 + a * r)) / (a * a * a);
  }
  return chain(x, f, df, d2f);
}

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
template <int N>
Dual2<N> normal_cdf(const Dual2<N>& x) {
  const double p = normal_pdf(x.v);
  return chain(x, normal_cdf(x.v), p, -x.v * p);
}

}  // namespace evsmooth
