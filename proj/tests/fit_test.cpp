#include "evsmooth/fit.hpp"

#include "finite_difference.hpp"
#include "oracles.hpp"
#include "sim.hpp"

#include <gtest/gtest.h>

namespace evsmooth {
namespace {

using testing::gauss_data;
using testing::gaussian_reml_oracle;
using testing::gev_draw;
using testing::Problem;

const char* kGaussSmooth = R"({"family": "gauss", "response": "y", "formula": [[{"s": "x", "k": 10}], ["1"]]})";

TEST(PenalizedObjective, ZeroLambdaIsPlainNegLogLik) {
  Problem s(R"({"response": "y", "formula": [[{"s": "x"}], ["1"], ["1"]]})", testing::sine_gev_data(300, 1));
  Eigen::VectorXd beta = s.start();
  beta.segment(1, 9).setConstant(0.1);
  const auto d = s.problem->derivs(beta);
  const Eigen::MatrixXd S0 = s.problem->penalty(Eigen::VectorXd::Zero(1));
  EXPECT_DOUBLE_EQ(d.nll + 0.5 * beta.dot(S0 * beta), d.nll);
  // direct sum over observations
  double direct = 0.0;
  const Eigen::MatrixXd eta = s.problem->eta(beta);
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    GevParams p{eta(i, 0), std::exp(eta(i, 1)), eta(i, 2)};
    direct -= gev_logpdf_and_derivs(s.prep.response.lower(i), p).value;
  }
  EXPECT_NEAR(d.nll, direct, 1e-9 * std::abs(direct));
}

TEST(PenalizedObjective, DerivativesMatchFiniteDifferences) {
  Problem s(R"({"response": "y", "formula": [[{"s": "x"}], [{"s": "x", "k": 5}], ["x"]]})",
          testing::sine_gev_data(300, 2));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 0.05);
  Eigen::VectorXd beta = s.start();
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) += z(rng);
  const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(s.problem->npenalties(), 2.5);
  const Eigen::MatrixXd S = s.problem->penalty(lambda);
  auto f = [&](const Eigen::VectorXd& b) { return s.problem->negloglik(b) + 0.5 * b.dot(S * b); };
  auto g = [&](const Eigen::VectorXd& b) {
    const auto d = s.problem->derivs(b);
    return Eigen::VectorXd(d.grad + S * b);
  };
  const auto d = s.problem->derivs(beta);
  EXPECT_LT(testing::rel_error(Eigen::VectorXd(d.grad + S * beta), testing::fd_gradient(f, beta)), 1e-6);
  EXPECT_LT(testing::rel_error(Eigen::MatrixXd(d.hess + S), testing::fd_jacobian(g, beta)), 1e-6);
}

TEST(InnerNewton, LargeLambdaShrinksPenalizedRange) {
  Problem s(kGaussSmooth, gauss_data(200, 4));
  const auto r = inner_newton(*s.problem, s.problem->penalty(Eigen::VectorXd::Constant(1, 1e8)), s.start());
  ASSERT_TRUE(r.converged) << r.message;
  const auto& S = s.design.penalties[0].S;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  const Eigen::VectorXd b = r.beta.segment(1, 9);
  double range = 0.0;
  for (int j = 0; j < 9; ++j) {
    if (eig.eigenvalues()(j) > 1e-10 * eig.eigenvalues().maxCoeff()) {
      range += std::pow(eig.eigenvectors().col(j).dot(b), 2);
    }
  }
  EXPECT_LT(std::sqrt(range), 1e-4);
}

TEST(InnerNewton, GaussianMatchesGeneralizedRidge) {
  Problem s(kGaussSmooth, gauss_data(250, 5));
  const double lambda = 3.7;
  const auto r = inner_newton(*s.problem, s.problem->penalty(Eigen::VectorXd::Constant(1, lambda)), s.start());
  ASSERT_TRUE(r.converged) << r.message;
  const double sigma2 = std::exp(2.0 * r.beta(10));
  const Eigen::MatrixXd& X = s.problem->designs()[0];
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(10, 10);
  S.bottomRightCorner(9, 9) = lambda * s.design.penalties[0].S;
  const Eigen::VectorXd y = s.prep.response.lower;
  const Eigen::VectorXd ridge = (X.transpose() * X / sigma2 + S).ldlt().solve(X.transpose() * y / sigma2);
  EXPECT_LT((r.beta.head(10) - ridge).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Laml, MatchesGaussianOracle) {
  Problem s(kGaussSmooth, gauss_data(250, 6));
  for (double rho : {-2.0, 0.0, 1.5, 4.0}) {
    const auto r = laml(*s.problem, Eigen::VectorXd::Constant(1, rho), s.start());
    ASSERT_TRUE(std::isfinite(r.value));
    const double oracle = gaussian_reml_oracle(s.problem->designs()[0], s.prep.response.lower,
                                               s.design.penalties[0].S, std::exp(rho));
    EXPECT_NEAR(r.value, oracle, 1e-6) << "rho = " << rho;
  }
}

TEST(Laml, NoPenaltiesReducesToLaplaceAtMle) {
  Problem s(R"({"response": "y", "formula": [["x"], ["1"], ["1"]]})", testing::sine_gev_data(400, 7));
  const auto r = laml(*s.problem, Eigen::VectorXd(0), s.start());
  ASSERT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, r.inner.nll + 0.5 * std::log(r.inner.H.determinant()), 1e-8);
}

TEST(Laml, ContinuousInRho) {
  Problem s(kGaussSmooth, gauss_data(200, 8));
  const Eigen::VectorXd b0 = s.start();
  for (double rho = -10; rho <= 10; rho += 2.5) {
    const double a = laml(*s.problem, Eigen::VectorXd::Constant(1, rho), b0).value;
    const double b = laml(*s.problem, Eigen::VectorXd::Constant(1, rho + 1e-4), b0).value;
    ASSERT_TRUE(std::isfinite(a) && std::isfinite(b));
    EXPECT_LT(std::abs(a - b), 1e-2);
  }
}

TEST(InnerNewton, InterceptOnlyGumbel) {
  std::mt19937_64 rng(2024);
  std::vector<double> y(500);
  for (auto& v : y) v = gev_draw(rng, 0.0, 1.0, 0.0);
  DataTable d;
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"response": "y"})"), d);
  EXPECT_NEAR(m.beta(0), 0.0, 0.15);
  EXPECT_NEAR(m.beta(2), 0.0, 0.1);
  EXPECT_TRUE(m.diagnostics.inner_converged);
}

TEST(Outer, GaussianRmseNearGridOracle) {
  const auto data = gauss_data(300, 9);
  Problem s(kGaussSmooth, data);
  const auto m = fit(s.spec, data);
  const Eigen::VectorXd f = data.vector("f");
  auto rmse = [&](const Eigen::VectorXd& beta) {
    return std::sqrt((s.problem->designs()[0] * beta.head(10) - f).squaredNorm() / f.size());
  };
  double best = kInf;
  for (int i = 0; i < 30; ++i) {
    const double rho = -10.0 + 20.0 * i / 29.0;
    const auto r = inner_newton(*s.problem, s.problem->penalty(Eigen::VectorXd::Constant(1, std::exp(rho))), s.start());
    best = std::min(best, rmse(r.beta));
  }
  EXPECT_LE(rmse(m.beta), 1.1 * best);
}

TEST(Outer, PureNoiseCollapsesEdf) {
  const auto data = gauss_data(300, 10, 1.0, false);
  const auto m = fit(parse_spec_text(kGaussSmooth), data);
  EXPECT_LT(m.term_edf(0, 1), 2.5);
}

TEST(Outer, StationaryAtReportedRho) {
  const auto data = testing::sine_gev_data(800, 11);
  Problem s(R"({"response": "y", "formula": [[{"s": "x"}], ["1"], ["1"]]})", data);
  const auto m = fit(s.spec, data);
  EXPECT_TRUE(m.diagnostics.outer_converged) << m.diagnostics.outer_message;
  const Eigen::VectorXd g = laml_gradient(*s.problem, m.rho, m.beta);
  EXPECT_LT(detail::project(g, m.rho).lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_LE(m.laml, m.diagnostics.laml_initial + 1e-10);
  EXPECT_LT(m.diagnostics.inner_gradient, 1e-6 * std::max(1.0, std::abs(m.loglik)));
}

TEST(Outer, NewtonAndBfgsAgree) {
  const auto data = gauss_data(300, 12);
  auto spec = parse_spec_text(kGaussSmooth);
  const auto a = fit(spec, data);
  spec.options.outer = OuterMethod::newton;
  const auto b = fit(spec, data);
  EXPECT_NEAR(a.rho(0), b.rho(0), 1e-2);
  EXPECT_NEAR(a.laml, b.laml, 1e-6 * std::abs(a.laml));
}

TEST(Fit, EdfBookkeeping) {
  const auto data = gauss_data(300, 13);
  const auto m = fit(parse_spec_text(R"({"family": "gauss", "response": "y",
      "formula": [[{"s": "x", "k": 8}, "f"], ["1"]]})"), data);
  EXPECT_NEAR(m.term_edf(0, 2), 1.0, 1e-8);  // unpenalized linear term
  EXPECT_NEAR(m.term_edf(0, 0), 1.0, 1e-8);
  double sum = 0.0;
  for (int p = 0; p < m.n_params(); ++p)
    for (std::size_t t = 0; t < m.design.params[p].terms.size(); ++t) sum += m.term_edf(p, static_cast<int>(t));
  EXPECT_NEAR(sum, m.total_edf(), 1e-8);
  for (int p = 0; p < m.n_params(); ++p)
    for (std::size_t t = 0; t < m.design.params[p].terms.size(); ++t) {
      EXPECT_GE(m.term_edf(p, static_cast<int>(t)), -1e-8);
      EXPECT_LE(m.term_edf(p, static_cast<int>(t)), m.design.params[p].terms[t].dim() + 1e-8);
    }
}

TEST(Fit, InfinitePenaltyEdfCollapses) {
  auto spec = parse_spec_text(kGaussSmooth);
  spec.options.rho0 = {std::log(1e8)};
  const auto data = gauss_data(300, 14);
  const auto prep = prepare_data(spec, data);
  const auto design = assemble_design(spec, prep.basis_data);
  const PenalizedProblem P(design, prep.design_data, prep.response);
  std::vector<std::string> w;
  OuterResult fixed;
  fixed.rho = Eigen::VectorXd::Constant(1, std::log(1e8));
  fixed.inner = inner_newton(P, P.penalty(fixed.rho.array().exp()), initial_coefficients(spec, prep, design, w));
  const auto m = finalize_fit(spec, design, fixed);
  EXPECT_LT(m.term_edf(0, 1), 1.1);
}

TEST(Fit, DeterministicAndSubsampled) {
  const auto data = testing::sine_gev_data(600, 15);
  auto spec = parse_spec_text(R"({"response": "y", "formula": [[{"s": "x"}], ["1"], ["1"]],
      "options": {"maxdata": 400, "maxspline": 200, "seed": 7}})");
  const auto a = fit(spec, data);
  const auto b = fit(spec, data);
  EXPECT_TRUE(a.diagnostics.subsampled);
  EXPECT_EQ(a.diagnostics.n_used, 400u);
  EXPECT_EQ(a.diagnostics.n_basis, 200u);
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_EQ(a.rho, b.rho);
  EXPECT_EQ(a.V, b.V);
}

TEST(Fit, MissingResponsesDropped) {
  auto data = gauss_data(200, 16);
  auto y = data.text("y");
  for (int i = 0; i < 200; i += 10) y[i] = "NA";
  data.add_column("y", y);
  const auto m = fit(parse_spec_text(kGaussSmooth), data);
  EXPECT_EQ(m.diagnostics.n_missing, 20u);
  EXPECT_EQ(m.diagnostics.n_used, 180u);
}

TEST(Fit, PpUsesAllOrderStatistics) {
  std::mt19937_64 rng(17);
  std::vector<std::string> id;
  std::vector<double> y, x;
  for (int g = 0; g < 8; ++g) {
    for (int i = 0; i < 60; ++i) {
      id.push_back("s" + std::to_string(g));
      x.push_back(g / 7.0);
      y.push_back(testing::gpd_draw(rng, 1.0, 0.1) + 10.0);
    }
  }
  DataTable d;
  d.add_column("id", id);
  d.add_column("x", x);
  d.add_column("y", y);
  auto spec = parse_spec_text(R"({"family": "pp", "response": "y", "formula": [["x"], ["1"], ["1"]],
      "pp": {"id": "id", "ny": 30, "r": -1}})");
  const auto prep = prepare_data(spec, d);
  ASSERT_EQ(prep.response.groups.size(), 8u);
  for (const auto& g : prep.response.groups) EXPECT_EQ(g.values.size(), 60u);
  const auto m = fit(spec, d);
  EXPECT_TRUE(m.diagnostics.inner_converged);
  // 60 exceedances of 10 in 30 periods: two per period, so the annual-maximum
  // location sits near 10 + log 2
  EXPECT_NEAR(m.beta(0) + 0.5 * m.beta(1), 10.0 + std::log(2.0), 0.5);
  spec.pp.r = 5;
  const auto prep5 = prepare_data(spec, d);
  for (const auto& g : prep5.response.groups) EXPECT_EQ(g.values.size(), 5u);
}

TEST(Fit, AldRecoversQuantile) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> z;
  std::vector<double> y(5000);
  for (auto& v : y) v = z(rng);
  DataTable d;
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"family": "ald", "response": "y", "ald": {"tau": 0.9}})"), d);
  EXPECT_NEAR(m.beta(0), 1.2816, 0.06);
}

TEST(Fit, InitsAndRho0Validation) {
  const auto data = gauss_data(100, 19);
  auto spec = parse_spec_text(kGaussSmooth);
  spec.options.inits = {0.0, 0.0, 0.0};
  EXPECT_THROW(fit(spec, data), SpecError);
  spec.options.inits = {0.1, std::log(0.3)};
  EXPECT_NO_THROW(fit(spec, data));
  spec.options.inits.clear();
  spec.options.rho0 = {1.0, 2.0};
  EXPECT_THROW(fit(spec, data), SpecError);
}

}  // namespace
}  // namespace evsmooth
