#include "evsmooth/inference.hpp"
#include "evsmooth/model_io.hpp"

#include "finite_difference.hpp"
#include "sim.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

namespace evsmooth {
namespace {

// One shared GEV fit: smooth location, linear shape.
const FittedModel& gev_model() {
  static const FittedModel m = fit(
      parse_spec_text(R"({"response": "y", "formula": [[{"s": "x", "k": 8}], ["1"], ["x"]]})"),
      testing::sine_gev_data(600, 21));
  return m;
}

DataTable grid(int n) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = (i + 0.5) / n;
  DataTable d;
  d.add_column("x", x);
  return d;
}

TEST(PredictParameters, LinkScaleOnTrainingDataIsXBeta) {
  const auto& m = gev_model();
  const auto data = testing::sine_gev_data(600, 21);
  const auto pred = predict_parameters(m, data, Scale::link);
  const auto X = m.design.designs(data);
  for (int j = 0; j < 3; ++j) {
    const Eigen::VectorXd expect = X[j] * m.coefficients(j);
    EXPECT_EQ((pred.values.col(j) - expect).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(pred.names, (std::vector<std::string>{"location", "logscale", "shape"}));
}

TEST(PredictParameters, ResponseScaleAppliesInverseLinks) {
  const auto& m = gev_model();
  const auto link = predict_parameters(m, grid(50), Scale::link, true);
  const auto resp = predict_parameters(m, grid(50), Scale::response, true);
  EXPECT_EQ(resp.names, (std::vector<std::string>{"location", "scale", "shape"}));
  for (int i = 0; i < 50; ++i) {
    EXPECT_NEAR(resp.values(i, 1), std::exp(link.values(i, 1)), 1e-12);
    EXPECT_DOUBLE_EQ(resp.values(i, 0), link.values(i, 0));
    EXPECT_NEAR(resp.se(i, 1), resp.values(i, 1) * link.se(i, 1), 1e-12);
    for (int j = 0; j < 3; ++j) EXPECT_GT(link.se(i, j), 0.0);
  }
}

TEST(PredictParameters, InterceptOnlyIsConstant) {
  std::mt19937_64 rng(2);
  std::vector<double> y(300);
  for (auto& v : y) v = testing::gpd_draw(rng, 2.0, 0.1);
  DataTable d;
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"family": "gpd", "response": "y"})"), d);
  const auto pred = predict_parameters(m, grid(7), Scale::response);
  for (int i = 0; i < 7; ++i) {
    EXPECT_EQ(pred.values(i, 0), std::exp(m.beta(0)));
    EXPECT_EQ(pred.values(i, 1), m.beta(1));
  }
}

TEST(PredictParameters, MissingCovariates) {
  const auto& m = gev_model();
  DataTable d;
  d.add_column("z", std::vector<double>{1.0});
  EXPECT_THROW(predict_parameters(m, d, Scale::link), DataError);
  DataTable g;
  g.add_column("x", std::vector<double>{0.2, kNaN, 0.7});
  const auto pred = predict_parameters(m, g, Scale::response, true);
  EXPECT_TRUE(std::isnan(pred.values(1, 0)));
  EXPECT_TRUE(std::isnan(pred.se(1, 2)));
  EXPECT_TRUE(std::isfinite(pred.values(2, 0)));
}

TEST(PredictParameters, ExtrapolatesLinearly) {
  const auto& m = gev_model();
  DataTable d;
  d.add_column("x", std::vector<double>{1.5, 2.0, 2.5});
  const auto pred = predict_parameters(m, d, Scale::link);
  const double d1 = pred.values(1, 0) - pred.values(0, 0);
  const double d2 = pred.values(2, 0) - pred.values(1, 0);
  EXPECT_NEAR(d1, d2, 1e-9);
}

TEST(PredictQuantiles, ClosedFormPerRow) {
  const auto& m = gev_model();
  QuantileRequest q;
  q.probs = {0.9, 0.99};
  const auto pred = predict_quantiles(m, grid(20), q);
  const auto par = predict_parameters(m, grid(20), Scale::response);
  EXPECT_EQ(pred.names, (std::vector<std::string>{"q:0.9", "q:0.99"}));
  for (int i = 0; i < 20; ++i) {
    const GevParams g{par.values(i, 0), par.values(i, 1), par.values(i, 2)};
    EXPECT_NEAR(pred.values(i, 1), gev_return_level(g, 0.99), 1e-12);
    EXPECT_NEAR(std::exp(detail::gev_log_cdf(pred.values(i, 1), g.location, g.scale, g.shape)), 0.99, 1e-10);
    EXPECT_GT(pred.values(i, 1), pred.values(i, 0));
  }
  q.probs = {1.0};
  EXPECT_THROW(predict_quantiles(m, grid(2), q), DomainError);
}

TEST(PredictQuantiles, DeltaGradientMatchesFiniteDifferences) {
  const auto& m = gev_model();
  QuantileRequest q;
  q.probs = {0.99};
  const auto row = grid(5).select_rows({3});
  const auto pred = predict_quantiles(m, row, q, true);
  // gradient of the quantile w.r.t. beta by finite differences
  FittedModel copy = m;
  const Eigen::VectorXd g = testing::fd_gradient(
      [&](const Eigen::VectorXd& b) {
        copy.beta = b;
        return predict_quantiles(copy, row, q).values(0, 0);
      },
      m.beta, 1e-6);
  const double se_fd = std::sqrt(g.dot(m.V * g));
  EXPECT_NEAR(pred.se(0, 0), se_fd, 1e-6 * se_fd);
}

TEST(PredictQuantiles, GpdUsesThresholdAndRate) {
  std::mt19937_64 rng(4);
  std::vector<double> y(400);
  for (auto& v : y) v = testing::gpd_draw(rng, 1.5, 0.1);
  DataTable d;
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"family": "gpd", "response": "y"})"), d);
  QuantileRequest q;
  q.probs = {0.99};
  q.threshold = 11.4;
  q.m = 365.25;
  q.zeta = 0.05;
  q.theta = 0.5;
  const auto pred = predict_quantiles(m, grid(1), q, true);
  const double expect = gpd_return_level(11.4, std::exp(m.beta(0)), m.beta(1), 365.25, 0.05, 0.5, 0.99);
  EXPECT_NEAR(pred.values(0, 0), expect, 1e-12);
  EXPECT_GT(pred.se(0, 0), 0.0);
  DataTable u;
  u.add_column("u", std::vector<double>{10.0, 12.0});
  q.threshold_column = "u";
  const auto two = predict_quantiles(m, u, q);
  EXPECT_NEAR(two.values(1, 0) - two.values(0, 0), 2.0, 1e-12);
}

TEST(PredictQuantiles, RejectsOtherFamilies) {
  std::vector<double> y(100);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (auto& v : y) v = n(rng);
  DataTable d;
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"family": "gauss", "response": "y"})"), d);
  QuantileRequest q;
  q.probs = {0.5};
  EXPECT_THROW(predict_quantiles(m, d, q), SpecError);
}

TEST(Simulate, LinkScaleSdMatchesDeltaMethod) {
  const auto& m = gev_model();
  const auto g = grid(10);
  const auto pred = predict_parameters(m, g, Scale::link, true);
  SimulationRequest req;
  req.nsim = 10000;
  req.seed = 99;
  req.scale = Scale::link;
  const auto sim = simulate_posterior(m, g, req);
  ASSERT_EQ(sim.draws.size(), 3u);
  for (int j = 0; j < 3; ++j) {
    const auto& D = sim.draws[j];
    for (int i = 0; i < 10; ++i) {
      const double mean = D.row(i).mean();
      const double sd = std::sqrt((D.row(i).array() - mean).square().sum() / (req.nsim - 1));
      EXPECT_NEAR(sd, pred.se(i, j), 0.02 * pred.se(i, j)) << "param " << j << " row " << i;
      if (i < 3) {
        EXPECT_NEAR(mean, pred.values(i, j), 4.0 * pred.se(i, j) / std::sqrt(req.nsim));
      }
    }
  }
}

TEST(Simulate, SeedDeterminesDraws) {
  const auto& m = gev_model();
  SimulationRequest req;
  req.nsim = 50;
  req.seed = 7;
  const auto a = simulate_posterior(m, grid(5), req);
  const auto b = simulate_posterior(m, grid(5), req);
  for (std::size_t j = 0; j < a.draws.size(); ++j) EXPECT_TRUE(a.draws[j] == b.draws[j]);
  req.seed = 8;
  const auto c = simulate_posterior(m, grid(5), req);
  EXPECT_FALSE(a.draws[0] == c.draws[0]);
  req.nsim = 0;
  EXPECT_THROW(simulate_posterior(m, grid(5), req), SpecError);
}

TEST(Simulate, QuantileDrawsBracketEstimate) {
  const auto& m = gev_model();
  QuantileRequest q;
  q.probs = {0.99};
  SimulationRequest req;
  req.nsim = 2000;
  req.quantiles = q;
  const auto sim = simulate_posterior(m, grid(5), req);
  const auto pred = predict_quantiles(m, grid(5), q);
  EXPECT_EQ(sim.names, (std::vector<std::string>{"q:0.99"}));
  for (int i = 0; i < 5; ++i) {
    const Eigen::RowVectorXd r = sim.draws[0].row(i);
    const std::vector<double> v(r.data(), r.data() + r.size());
    const double lo = detail::quantile_type7(v, 0.025);
    const double hi = detail::quantile_type7(v, 0.975);
    EXPECT_LT(lo, pred.values(i, 0));
    EXPECT_GT(hi, pred.values(i, 0));
  }
}

TEST(Summary, EdfAndTests) {
  const auto& m = gev_model();
  const auto s = summarize(m);
  ASSERT_EQ(s.smooth.size(), 1u);
  ASSERT_EQ(s.parametric.size(), 4u);  // three intercepts and the linear shape term
  EXPECT_EQ(s.parametric[3].term, "x");
  EXPECT_EQ(s.parametric[3].parameter, "shape");
  // unpenalized coefficients carry exactly one edf each
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(m.edf(m.design.param_start[j]), 1.0, 1e-8);
  EXPECT_NEAR(m.edf(m.design.term_start(2, 1)), 1.0, 1e-8);
  const auto& sm = s.smooth[0];
  EXPECT_EQ(sm.max_df, 7);
  EXPECT_GE(sm.edf, 0.0);
  EXPECT_LE(sm.edf, sm.max_df);
  EXPECT_GT(sm.chi_sq, 100.0);  // the sine signal is strong
  EXPECT_LT(sm.p, 1e-10);
  double total = 0.0;
  for (int j = 0; j < 3; ++j)
    for (std::size_t t = 0; t < m.design.params[j].terms.size(); ++t) total += m.term_edf(j, static_cast<int>(t));
  EXPECT_NEAR(total, m.total_edf(), 1e-8);
  const auto text = render_summary(m, s);
  EXPECT_NE(text.find("** Parametric terms **"), std::string::npos);
  EXPECT_NE(text.find("** Smooth terms **"), std::string::npos);
  EXPECT_NE(text.find("s(x)"), std::string::npos);
  EXPECT_NE(text.find("approximate"), std::string::npos);
}

// ---------------------------------------------------------------------------
// model.json

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("evsmooth_" + name)).string();
}

TEST(ModelIo, RoundTripIsBitExact) {
  const auto& m = gev_model();
  const auto path = temp_path("gev.json");
  save_model(m, path);
  const auto back = load_model(path);
  std::remove(path.c_str());
  EXPECT_TRUE(back.beta == m.beta);
  EXPECT_TRUE(back.rho == m.rho);
  EXPECT_TRUE(back.V == m.V);
  EXPECT_TRUE(back.edf == m.edf);
  EXPECT_EQ(back.loglik, m.loglik);
  EXPECT_EQ(back.design.coef_names(), m.design.coef_names());
  EXPECT_EQ(model_to_json(back).dump(), model_to_json(m).dump());
  const auto g = grid(40);
  EXPECT_TRUE(predict_parameters(back, g, Scale::response, true).values ==
              predict_parameters(m, g, Scale::response, true).values);
  QuantileRequest q;
  q.probs = {0.99};
  EXPECT_TRUE(predict_quantiles(back, g, q, true).se == predict_quantiles(m, g, q, true).se);
}

TEST(ModelIo, AllBasisKindsRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> e(0.0, 0.3);
  const int n = 400;
  std::vector<double> a(n), b(n), c(n), y(n);
  for (int i = 0; i < n; ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
    c[i] = 12.0 * u(rng);
    y[i] = std::sin(3 * a[i]) + b[i] * b[i] + std::cos(2 * M_PI * c[i] / 12.0) + e(rng);
  }
  DataTable d;
  d.add_column("a", a);
  d.add_column("b", b);
  d.add_column("c", c);
  d.add_column("y", y);
  const auto m = fit(parse_spec_text(R"({"family": "gauss", "response": "y", "formula": [
      [{"s": ["a", "b"], "k": 12}, {"s": "c", "bs": "cc", "k": 6, "knots": [0, 2, 4, 6, 8, 10, 12]}],
      [{"te": ["a", "c"], "bs": ["cr", "cc"], "k": [4, 4]}]]})"),
                     d);
  const auto back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
  EXPECT_TRUE(predict_parameters(back, d, Scale::response, true).se ==
              predict_parameters(m, d, Scale::response, true).se);
  EXPECT_EQ(back.design.penalties.size(), m.design.penalties.size());
  EXPECT_EQ(back.design.ngroups, m.design.ngroups);
}

TEST(ModelIo, SpecRoundTrip) {
  const char* text = R"({"family": "pp", "response": "y", "formula": [[{"s": "x", "k": 6}], ["1"], ["z"]],
      "pp": {"id": "year", "r": 3, "ny": {"1990": 365, "1991": 365.25}},
      "options": {"maxdata": 500, "rho0": [1, 2], "outer": "Newton", "seed": 12, "na": "."}})";
  const auto s = parse_spec_text(text);
  const auto j = spec_to_json(s);
  EXPECT_EQ(spec_to_json(parse_spec(j)).dump(), j.dump());
  const auto back = parse_spec(j);
  EXPECT_EQ(back.pp.ny_by_id.at("1991"), 365.25);
  EXPECT_EQ(back.options.maxdata, 500u);
  EXPECT_EQ(back.options.outer, OuterMethod::newton);
  EXPECT_EQ(back.formulas[2][0].vars[0], "z");
}

TEST(ModelIo, RejectsWrongVersion) {
  auto j = model_to_json(gev_model());
  j["schema_version"] = 99;
  EXPECT_THROW(model_from_json(j), IoError);
  j["schema_version"] = kModelSchemaVersion;
  j["format"] = "other";
  EXPECT_THROW(model_from_json(j), IoError);
  EXPECT_THROW(load_model(temp_path("does_not_exist.json")), IoError);
}

}  // namespace
}  // namespace evsmooth
