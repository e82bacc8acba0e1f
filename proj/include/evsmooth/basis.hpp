#pragma once

// Spline bases and roughness penalties: cubic regression splines (natural
// and cyclic) parameterized by their values at the knots, rank-reduced thin
// plate regression splines in two dimensions, and tensor products of cubic
// margins.

#include "evsmooth/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace evsmooth {

// Knots at k equally spaced quantiles of the unique values of x.
inline Eigen::VectorXd place_knots(const Eigen::VectorXd& x, int k) {
  std::vector<double> u(x.data(), x.data() + x.size());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (static_cast<int>(u.size()) < k) {
    throw DataError("basis dimension k = " + std::to_string(k) + " exceeds the " +
                    std::to_string(u.size()) + " distinct covariate values");
  }
  Eigen::VectorXd knots(k);
  const double last = static_cast<double>(u.size() - 1);
  for (int i = 0; i < k; ++i) {
    const double pos = last * i / (k - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, u.size() - 1);
    knots(i) = u[lo] + (pos - lo) * (u[hi] - u[lo]);
  }
  return knots;
}

inline void check_knots(const Eigen::VectorXd& knots) {
  if (knots.size() < 3) throw DataError("cubic splines need at least 3 knots");
  for (Eigen::Index i = 1; i < knots.size(); ++i) {
    if (!(knots(i) > knots(i - 1))) throw DataError("knots must be strictly increasing");
  }
}

// Cubic spline whose coefficients are its values at the knots. The natural
// ("cr") form extends linearly beyond the boundary knots; the cyclic ("cc")
// form has period knots.back() - knots.front() and one fewer coefficient,
// the last knot being identified with the first.
struct CubicSpline1D {
  bool cyclic = false;
  Eigen::VectorXd knots;
  Eigen::MatrixXd second_derivs;  // coefficients -> f'' at knots
  Eigen::MatrixXd penalty;        // integral of f''^2

  int dim() const { return static_cast<int>(knots.size()) - (cyclic ? 1 : 0); }

  double period() const { return knots(knots.size() - 1) - knots(0); }

  Eigen::RowVectorXd evaluate(double x) const {
    const int k = static_cast<int>(knots.size());
    const int m = dim();
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(m);
    auto coef = [&](int i) { return cyclic ? i % m : i; };

    if (cyclic) {
      x = knots(0) + std::fmod(x - knots(0), period());
      if (x < knots(0)) x += period();
    } else if (x < knots(0) || x > knots(k - 1)) {
      // linear extension using the boundary slope (f'' = 0 there)
      const bool left = x < knots(0);
      const int j = left ? 0 : k - 2;
      const double h = knots(j + 1) - knots(j);
      Eigen::RowVectorXd slope = Eigen::RowVectorXd::Zero(m);
      slope(j + 1) += 1.0 / h;
      slope(j) -= 1.0 / h;
      if (left) {
        slope -= h / 3.0 * second_derivs.row(j) + h / 6.0 * second_derivs.row(j + 1);
        row(0) = 1.0;
        return row + (x - knots(0)) * slope;
      }
      slope += h / 6.0 * second_derivs.row(j) + h / 3.0 * second_derivs.row(j + 1);
      row(k - 1) = 1.0;
      return row + (x - knots(k - 1)) * slope;
    }

    auto it = std::upper_bound(knots.data(), knots.data() + k, x);
    int j = static_cast<int>(it - knots.data()) - 1;
    j = std::clamp(j, 0, k - 2);
    const double h = knots(j + 1) - knots(j);
    const double dm = knots(j + 1) - x;
    const double dp = x - knots(j);
    const double cm = (dm * dm * dm / h - h * dm) / 6.0;
    const double cp = (dp * dp * dp / h - h * dp) / 6.0;
    row(coef(j)) += dm / h;
    row(coef(j + 1)) += dp / h;
    row += cm * second_derivs.row(coef(j)) + cp * second_derivs.row(coef(j + 1));
    return row;
  }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd X(x.size(), dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) X.row(i) = evaluate(x(i));
    return X;
  }
};

inline CubicSpline1D make_cubic_spline(const Eigen::VectorXd& knots, bool cyclic) {
  check_knots(knots);
  CubicSpline1D s;
  s.cyclic = cyclic;
  s.knots = knots;
  const int k = static_cast<int>(knots.size());
  Eigen::VectorXd h = knots.tail(k - 1) - knots.head(k - 1);

  // Continuity of f' at each knot: B * f'' = D * beta.
  if (!cyclic) {
    const int m = k - 2;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m, k);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      D(i, i) = 1.0 / h(i);
      D(i, i + 1) = -1.0 / h(i) - 1.0 / h(i + 1);
      D(i, i + 2) = 1.0 / h(i + 1);
      B(i, i) = (h(i) + h(i + 1)) / 3.0;
      if (i + 1 < m) B(i, i + 1) = B(i + 1, i) = h(i + 1) / 6.0;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(B);
    const Eigen::MatrixXd BinvD = ldlt.solve(D);
    s.second_derivs = Eigen::MatrixXd::Zero(k, k);
    s.second_derivs.middleRows(1, m) = BinvD;
    s.penalty = D.transpose() * BinvD;
  } else {
    const Eigen::Index n = k - 1;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index prev = (j + n - 1) % n;
      const Eigen::Index next = (j + 1) % n;
      const double hp = h(prev);  // interval ending at knot j (wraps)
      const double hn = h(j);     // interval starting at knot j
      B(j, j) += (hp + hn) / 3.0;
      B(j, next) += hn / 6.0;
      B(j, prev) += hp / 6.0;
      D(j, j) += -1.0 / hp - 1.0 / hn;
      D(j, next) += 1.0 / hn;
      D(j, prev) += 1.0 / hp;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(B);
    s.second_derivs = ldlt.solve(D);
    s.penalty = D.transpose() * s.second_derivs;
  }
  s.penalty = 0.5 * (s.penalty + s.penalty.transpose()).eval();
  return s;
}

struct SplineBasis {
  CubicSpline1D spline;
  Eigen::MatrixXd design;
};

inline SplineBasis build_cr_basis(const Eigen::VectorXd& x, int k,
                                  const Eigen::VectorXd& knots = Eigen::VectorXd()) {
  if (k < 3) throw SpecError("cr basis needs k >= 3");
  SplineBasis b;
  b.spline = make_cubic_spline(knots.size() > 0 ? knots : place_knots(x, k), false);
  b.design = b.spline.evaluate(x);
  return b;
}

inline SplineBasis build_cc_basis(const Eigen::VectorXd& x, int k,
                                  const Eigen::VectorXd& knots = Eigen::VectorXd()) {
  if (k < 3) throw SpecError("cc basis needs k >= 3");
  SplineBasis b;
  b.spline = make_cubic_spline(knots.size() > 0 ? knots : place_knots(x, k), true);
  b.design = b.spline.evaluate(x);
  return b;
}

// Thin plate spline radial function for two dimensions and second-order
// penalty: r^2 log(r) / (8 pi).
inline double thin_plate_eta(double r) {
  return r > 0.0 ? r * r * std::log(r) / (8.0 * M_PI) : 0.0;
}

// Rank-reduced thin plate regression spline: the radial basis over the
// knot set is truncated to the eigenvectors of its k largest-magnitude
// eigenvalues, constrained orthogonal to the affine null space. Columns are
// (k - 3 radial components, 1, x1, x2).
struct ThinPlate2D {
  Eigen::MatrixXd knots;       // m x 2
  Eigen::MatrixXd kernel_map;  // m x (k - 3)
  Eigen::MatrixXd penalty;     // k x k

  int dim() const { return static_cast<int>(kernel_map.cols()) + 3; }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) const {
    const Eigen::Index n = x1.size();
    const Eigen::Index m = knots.rows();
    Eigen::MatrixXd E(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        E(i, j) = thin_plate_eta(std::hypot(x1(i) - knots(j, 0), x2(i) - knots(j, 1)));
      }
    }
    Eigen::MatrixXd X(n, dim());
    X.leftCols(kernel_map.cols()) = E * kernel_map;
    X.col(dim() - 3).setOnes();
    X.col(dim() - 2) = x1;
    X.col(dim() - 1) = x2;
    return X;
  }
};

struct ThinPlateBasis {
  ThinPlate2D spline;
  Eigen::MatrixXd design;
};

// Unique 2-d points, subsampled to at most max_knots with a fixed seed.
inline Eigen::MatrixXd unique_points(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                                     std::size_t max_knots, std::uint64_t seed) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(x1.size());
  for (Eigen::Index i = 0; i < x1.size(); ++i) pts.emplace_back(x1(i), x2(i));
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() > max_knots) {
    std::vector<std::pair<double, double>> keep;
    std::mt19937_64 rng(seed);
    std::sample(pts.begin(), pts.end(), std::back_inserter(keep), max_knots, rng);
    pts.swap(keep);
  }
  Eigen::MatrixXd out(pts.size(), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(i) << pts[i].first, pts[i].second;
  return out;
}

inline ThinPlateBasis build_tp_basis(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2, int k,
                                     std::size_t max_knots = 2000, std::uint64_t seed = 1) {
  if (k < 4) throw SpecError("tp basis needs k >= 4");
  const Eigen::MatrixXd pts = unique_points(x1, x2, max_knots, seed);
  const Eigen::Index m = pts.rows();
  if (m < k) {
    throw DataError("tp basis dimension k = " + std::to_string(k) + " exceeds the " +
                    std::to_string(m) + " distinct points");
  }
  Eigen::MatrixXd T(m, 3);
  T.col(0).setOnes();
  T.col(1) = pts.col(0);
  T.col(2) = pts.col(1);
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(T);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) throw DataError("tp basis: covariate points are collinear");
  }
  Eigen::MatrixXd E(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    E(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      E(i, j) = E(j, i) = thin_plate_eta((pts.row(i) - pts.row(j)).norm());
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(E);
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return std::abs(ev(a)) > std::abs(ev(b)); });
  Eigen::MatrixXd Uk(m, k);
  Eigen::VectorXd Dk(k);
  for (int j = 0; j < k; ++j) {
    Uk.col(j) = eig.eigenvectors().col(order[j]);
    Dk(j) = ev(order[j]);
  }
  // Null space of T' U_k: coefficients whose radial part is orthogonal to
  // the affine functions.
  const Eigen::MatrixXd C = (T.transpose() * Uk).transpose();  // k x 3
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(C);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd Z = Q.rightCols(k - 3);

  ThinPlateBasis b;
  b.spline.knots = pts;
  b.spline.kernel_map = Uk * Z;
  b.spline.penalty = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd P = Z.transpose() * Dk.asDiagonal() * Z;
  b.spline.penalty.topLeftCorner(k - 3, k - 3) = 0.5 * (P + P.transpose());
  b.design = b.spline.evaluate(x1, x2);
  return b;
}

// Tensor product of cubic spline margins with one penalty per margin:
// S_1 = P_1 (x) I, S_2 = I (x) P_2.
struct TensorSpline {
  std::vector<CubicSpline1D> margins;

  int dim() const {
    int d = 1;
    for (const auto& m : margins) d *= m.dim();
    return d;
  }

  Eigen::MatrixXd evaluate(const std::vector<Eigen::VectorXd>& x) const {
    const Eigen::Index n = x.front().size();
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
    for (std::size_t m = 0; m < margins.size(); ++m) {
      const Eigen::MatrixXd B = margins[m].evaluate(x[m]);
      Eigen::MatrixXd next(n, X.cols() * B.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index a = 0; a < X.cols(); ++a) {
          next.row(i).segment(a * B.cols(), B.cols()) = X(i, a) * B.row(i);
        }
      }
      X.swap(next);
    }
    return X;
  }

  std::vector<Eigen::MatrixXd> penalties() const {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t m = 0; m < margins.size(); ++m) {
      Eigen::MatrixXd S = Eigen::MatrixXd::Ones(1, 1);
      for (std::size_t j = 0; j < margins.size(); ++j) {
        const Eigen::MatrixXd F = (j == m) ? margins[j].penalty
                                           : Eigen::MatrixXd::Identity(margins[j].dim(),
                                                                       margins[j].dim());
        Eigen::MatrixXd K(S.rows() * F.rows(), S.cols() * F.cols());
        for (Eigen::Index a = 0; a < S.rows(); ++a)
          for (Eigen::Index b = 0; b < S.cols(); ++b)
            K.block(a * F.rows(), b * F.cols(), F.rows(), F.cols()) = S(a, b) * F;
        S.swap(K);
      }
      out.push_back(std::move(S));
    }
    return out;
  }
};

struct TensorBasis {
  TensorSpline spline;
  Eigen::MatrixXd design;
  std::vector<Eigen::MatrixXd> penalties;
};

inline TensorBasis build_tensor(const std::vector<CubicSpline1D>& margins,
                                const std::vector<Eigen::VectorXd>& x, int max_dim = 1000) {
  if (margins.size() != x.size() || margins.empty()) {
    throw SpecError("tensor product needs one covariate per margin");
  }
  TensorBasis b;
  b.spline.margins = margins;
  if (b.spline.dim() > max_dim) {
    throw SpecError("tensor product dimension " + std::to_string(b.spline.dim()) +
                    " exceeds the cap of " + std::to_string(max_dim));
  }
  b.design = b.spline.evaluate(x);
  b.penalties = b.spline.penalties();
  return b;
}

// Orthonormal basis Z (m x (m-1)) for {beta : c' beta = 0}.
inline Eigen::MatrixXd sum_to_zero_transform(const Eigen::RowVectorXd& c) {
  const Eigen::Index m = c.size();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(c.transpose()));
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
  return Q.rightCols(m - 1);
}

}  // namespace evsmooth
