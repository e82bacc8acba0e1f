#pragma once

// Command-line front end. run() is the whole program; tools/evsmooth.cpp only
// forwards argv. Exit codes: 0 success, 1 unexpected, 2 usage or spec error,
// 3 data, domain or fitting error, 4 file I/O error.

#include "evsmooth/declustering.hpp"
#include "evsmooth/fit.hpp"
#include "evsmooth/inference.hpp"
#include "evsmooth/model_io.hpp"
#include "evsmooth/return_levels.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace evsmooth::cli {

enum ExitCode { kOk = 0, kUnexpected = 1, kUsage = 2, kFitFailure = 3, kIoFailure = 4 };

namespace detail {

inline void write_table(const DataTable& t, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    t.write_csv(out);
  } else {
    t.write_csv_file(path);
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline DataTable keep_columns(const DataTable& data, const std::vector<std::string>& keep, DataTable pred) {
  DataTable out;
  for (const auto& c : keep) out.add_column(c, data.text(c));
  for (const auto& c : pred.names()) out.add_column(c, pred.text(c));
  return out;
}

inline nlohmann::json diagnostics_json(const FittedModel& m) {
  auto j = io::diagnostics(m.diagnostics);
  j["loglik"] = io::number(m.loglik);
  j["laml"] = io::number(m.laml);
  j["n_coef"] = m.beta.size();
  j["total_edf"] = m.total_edf();
  nlohmann::json sp = nlohmann::json::array();
  for (std::size_t k = 0; k < m.design.penalties.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    sp.push_back({{"label", m.design.penalties[k].label}, {"rho", m.rho(ki)}, {"lambda", std::exp(m.rho(ki))}});
  }
  j["smoothing_parameters"] = sp;
  nlohmann::json terms = nlohmann::json::array();
  for (int p = 0; p < m.n_params(); ++p) {
    const auto& par = m.design.params[p];
    for (std::size_t t = 0; t < par.terms.size(); ++t) {
      terms.push_back({{"parameter", par.name}, {"term", par.terms[t].spec.label()},
                       {"edf", m.term_edf(p, static_cast<int>(t))}});
    }
  }
  j["term_edf"] = terms;
  return j;
}

struct QuantileArgs {
  std::vector<double> probs;
  std::optional<double> threshold;
  std::string threshold_column;
  double m = 1.0;
  double zeta = 1.0;
  double theta = 1.0;

  QuantileRequest request() const {
    QuantileRequest q;
    q.probs = probs;
    q.threshold = threshold.value_or(0.0);
    q.threshold_column = threshold_column;
    q.m = m;
    q.zeta = zeta;
    q.theta = theta;
    return q;
  }
};

inline void add_quantile_options(CLI::App* app, QuantileArgs& a, bool with_probs = true) {
  if (with_probs) app->add_option("--prob", a.probs, "return-level probabilities (non-exceedance)");
  app->add_option("--threshold", a.threshold, "gpd: threshold u added to the excess quantile");
  app->add_option("--threshold-column", a.threshold_column, "gpd: column holding the threshold per row");
  app->add_option("--m", a.m, "gpd: observations per period (n_y)");
  app->add_option("--zeta", a.zeta, "gpd: threshold exceedance probability");
  app->add_option("--theta", a.theta, "gpd: extremal index");
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Penalized spline extreme-value models", "evsmooth"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::to_string(kModelSchemaVersion));

  // fit
  std::string spec_path, data_path, out_dir = ".";
  std::optional<int> trace;
  std::optional<double> maxdata, maxspline;
  std::vector<double> rho0;
  std::optional<std::string> outer;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> na;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model; writes model.json, summary.txt and diagnostics.json");
  fit_cmd->add_option("--spec", spec_path, "model spec (JSON)")->required();
  fit_cmd->add_option("--data", data_path, "training data (CSV)")->required();
  fit_cmd->add_option("--out", out_dir, "output directory");
  fit_cmd->add_option("--trace", trace, "-1 silent, 0 warnings, 1 outer, 2 inner iterations");
  fit_cmd->add_option("--maxdata", maxdata, "subsample the data to at most this many rows");
  fit_cmd->add_option("--maxspline", maxspline, "rows used to place knots and constraints");
  fit_cmd->add_option("--rho0", rho0, "initial log smoothing parameters");
  fit_cmd->add_option("--outer", outer, "BFGS, Newton or FD");
  fit_cmd->add_option("--seed", seed, "seed for subsampling");
  fit_cmd->add_option("--na", na, "missing-value token");

  // predict
  std::string model_path, pred_data, pred_out;
  std::string scale = "response";
  bool want_se = false;
  std::vector<std::string> keep;
  detail::QuantileArgs pq;
  auto* pred_cmd = app.add_subcommand("predict", "predict parameters or return levels at new covariates");
  pred_cmd->add_option("--model", model_path, "model.json")->required();
  pred_cmd->add_option("--data", pred_data, "new data (CSV)")->required();
  pred_cmd->add_option("--out", pred_out, "output CSV (default stdout)");
  pred_cmd->add_option("--scale", scale, "link or response")->check(CLI::IsMember({"link", "response"}));
  pred_cmd->add_flag("--se", want_se, "add delta-method standard errors");
  pred_cmd->add_option("--keep", keep, "input columns copied to the output");
  detail::add_quantile_options(pred_cmd, pq);

  // simulate
  int nsim = 1000;
  std::uint64_t sim_seed = 1;
  auto* sim_cmd = app.add_subcommand("simulate", "draw from the Gaussian approximation to the posterior");
  sim_cmd->add_option("--model", model_path, "model.json")->required();
  sim_cmd->add_option("--data", pred_data, "new data (CSV)")->required();
  sim_cmd->add_option("--out", pred_out, "output CSV; the seed is recorded in <out>.seed.json")->required();
  sim_cmd->add_option("--nsim", nsim, "number of draws")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim_seed, "random seed");
  sim_cmd->add_option("--scale", scale, "link or response")->check(CLI::IsMember({"link", "response"}));
  detail::add_quantile_options(sim_cmd, pq);

  // qev
  std::string params_path, qev_family = "gev", weight_column;
  std::vector<double> qev_p = {0.99};
  double qev_m = 1.0, qev_theta = 1.0, qev_tau = 0.0;
  detail::QuantileArgs qq;
  auto* qev_cmd = app.add_subcommand("qev", "return level of the composite annual maximum");
  auto* qev_params = qev_cmd->add_option("--params", params_path,
                                         "CSV of parameter rows: location (or threshold), scale, shape [, weight]");
  auto* qev_model = qev_cmd->add_option("--model", model_path, "model.json; parameters predicted on --data");
  qev_cmd->add_option("--data", pred_data, "covariate rows for --model");
  qev_cmd->add_option("--p", qev_p, "annual non-exceedance probabilities");
  qev_cmd->add_option("--family", qev_family, "gev or gpd (with --params)")->check(CLI::IsMember({"gev", "gpd"}));
  qev_cmd->add_option("--m", qev_m, "blocks or observations per year");
  qev_cmd->add_option("--theta", qev_theta, "extremal index (gpd)");
  qev_cmd->add_option("--tau", qev_tau, "1 - zeta (gpd)");
  qev_cmd->add_option("--weight-column", weight_column, "column of weights alpha (default 1/rows)");
  qev_cmd->add_option("--threshold", qq.threshold, "gpd with --model: threshold u");
  qev_cmd->add_option("--threshold-column", qq.threshold_column, "gpd with --model: threshold column");
  qev_cmd->add_option("--out", pred_out, "output CSV (default stdout)");
  qev_params->excludes(qev_model);

  // block-maxima
  std::vector<std::string> block_keys;
  std::string value_column;
  auto* bm_cmd = app.add_subcommand("block-maxima", "maximum of a column within blocks");
  bm_cmd->add_option("--data", data_path, "input CSV")->required();
  bm_cmd->add_option("--block", block_keys, "block key columns")->required();
  bm_cmd->add_option("--value", value_column, "value column")->required();
  bm_cmd->add_option("--out", pred_out, "output CSV (default stdout)");
  bm_cmd->add_option("--na", na, "missing-value token");

  // excesses
  std::string excess_name = "excess";
  detail::QuantileArgs ex;
  auto* ex_cmd = app.add_subcommand("excesses", "threshold excesses y - u (missing where y <= u)");
  ex_cmd->add_option("--data", data_path, "input CSV")->required();
  ex_cmd->add_option("--value", value_column, "value column")->required();
  auto* ex_u = ex_cmd->add_option("--threshold", ex.threshold, "constant threshold");
  auto* ex_uc = ex_cmd->add_option("--threshold-column", ex.threshold_column, "threshold per row");
  ex_cmd->add_option("--name", excess_name, "name of the added column");
  ex_cmd->add_option("--out", pred_out, "output CSV (default stdout)");
  ex_cmd->add_option("--na", na, "missing-value token");
  ex_u->excludes(ex_uc);

  // extremal-index
  std::string time_column;
  std::optional<double> ei_threshold;
  auto* ei_cmd = app.add_subcommand("extremal-index", "Ferro-Segers moment estimate of the extremal index");
  ei_cmd->add_option("--data", data_path, "input CSV")->required();
  ei_cmd->add_option("--time", time_column, "time stamps (strictly increasing)")->required();
  ei_cmd->add_option("--value", value_column, "values; exceedances are value > threshold");
  ei_cmd->add_option("--threshold", ei_threshold, "threshold for --value");
  ei_cmd->add_option("--na", na, "missing-value token");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const std::string na_token = na.value_or("NA");

    if (fit_cmd->parsed()) {
      auto spec = parse_spec_file(spec_path);
      auto& o = spec.options;
      if (trace) o.trace = *trace;
      if (maxdata) {
        if (!(*maxdata >= 1.0)) throw SpecError("--maxdata must be >= 1");
        o.maxdata = static_cast<std::size_t>(*maxdata);
      }
      if (maxspline) {
        if (!(*maxspline >= 1.0)) throw SpecError("--maxspline must be >= 1");
        o.maxspline = static_cast<std::size_t>(*maxspline);
      }
      if (!rho0.empty()) o.rho0 = rho0;
      if (outer) o.outer = parse_outer(*outer);
      if (seed) o.seed = *seed;
      if (na) o.na_token = *na;
      const auto data = DataTable::read_csv_file(data_path, o.na_token);
      const auto model = fit(spec, data);
      std::filesystem::create_directories(out_dir);
      const std::filesystem::path dir(out_dir);
      save_model(model, (dir / "model.json").string());
      detail::write_text((dir / "summary.txt").string(), render_summary(model, summarize(model)));
      detail::write_text((dir / "diagnostics.json").string(), detail::diagnostics_json(model).dump(2) + "\n");
      if (o.trace >= 0) {
        for (const auto& w : model.diagnostics.warnings) err << "warning: " << w << '\n';
      }
      if (o.trace >= 1 || model.diagnostics.n_missing > 0) {
        err << "fit: " << model.diagnostics.n_used << " rows used, " << model.diagnostics.n_missing
            << " with missing values dropped\n";
      }
      return kOk;
    }

    if (pred_cmd->parsed()) {
      const auto model = load_model(model_path);
      const auto data = DataTable::read_csv_file(pred_data, model.spec.options.na_token);
      const auto pred = pq.probs.empty() ? predict_parameters(model, data, parse_scale(scale), want_se)
                                         : predict_quantiles(model, data, pq.request(), want_se);
      detail::write_table(detail::keep_columns(data, keep, pred.to_table()), pred_out, out);
      return kOk;
    }

    if (sim_cmd->parsed()) {
      const auto model = load_model(model_path);
      const auto data = DataTable::read_csv_file(pred_data, model.spec.options.na_token);
      SimulationRequest req;
      req.nsim = nsim;
      req.seed = sim_seed;
      req.scale = parse_scale(scale);
      if (!pq.probs.empty()) req.quantiles = pq.request();
      const auto sim = simulate_posterior(model, data, req);
      std::vector<std::string> row_col, target_col;
      std::vector<std::vector<double>> cols(static_cast<std::size_t>(nsim));
      for (std::size_t t = 0; t < sim.names.size(); ++t) {
        for (Eigen::Index i = 0; i < sim.draws[t].rows(); ++i) {
          row_col.push_back(std::to_string(i + 1));
          target_col.push_back(sim.names[t]);
          for (int s = 0; s < nsim; ++s) cols[s].push_back(sim.draws[t](i, s));
        }
      }
      DataTable table;
      table.add_column("row", row_col);
      table.add_column("target", target_col);
      for (int s = 0; s < nsim; ++s) table.add_column("sim" + std::to_string(s + 1), cols[s]);
      table.write_csv_file(pred_out);
      const nlohmann::json sidecar = {{"seed", sim_seed},     {"nsim", nsim},         {"model", model_path},
                                      {"data", pred_data},    {"targets", sim.names}, {"scale", scale},
                                      {"ridge", sim.ridge}};
      detail::write_text(pred_out + ".seed.json", sidecar.dump(2) + "\n");
      return kOk;
    }

    if (qev_cmd->parsed()) {
      ReturnLevelQuery q;
      q.m = qev_m;
      q.theta = qev_theta;
      q.tau = qev_tau;
      if (!model_path.empty()) {
        if (pred_data.empty()) throw SpecError("qev --model needs --data");
        const auto model = load_model(model_path);
        const auto data = DataTable::read_csv_file(pred_data, model.spec.options.na_token);
        const auto par = predict_parameters(model, data, Scale::response);
        if (model.spec.family == Family::gpd) {
          q.family = Family::gpd;
          if (!qq.threshold && qq.threshold_column.empty()) throw SpecError("qev on a gpd model needs a threshold");
          const auto u = qq.threshold_column.empty()
                             ? std::vector<double>(data.rows(), *qq.threshold)
                             : data.numeric(qq.threshold_column);
          q.location = u;
          q.scale.assign(par.values.col(0).data(), par.values.col(0).data() + par.values.rows());
          q.shape.assign(par.values.col(1).data(), par.values.col(1).data() + par.values.rows());
        } else if (model.spec.family == Family::gev || model.spec.family == Family::pp) {
          for (int c = 0; c < 3; ++c) {
            auto& dst = c == 0 ? q.location : c == 1 ? q.scale : q.shape;
            dst.assign(par.values.col(c).data(), par.values.col(c).data() + par.values.rows());
          }
        } else {
          throw SpecError("qev needs a gev, pp or gpd model");
        }
        if (!weight_column.empty()) q.alpha = data.numeric(weight_column);
        // rows with missing covariates have no parameters
        std::size_t kept = 0;
        for (std::size_t i = 0; i < q.location.size(); ++i) {
          if (!std::isfinite(q.location[i]) || !std::isfinite(q.scale[i]) || !std::isfinite(q.shape[i])) continue;
          q.location[kept] = q.location[i];
          q.scale[kept] = q.scale[i];
          q.shape[kept] = q.shape[i];
          if (!q.alpha.empty()) q.alpha[kept] = q.alpha[i];
          ++kept;
        }
        if (kept < q.location.size()) {
          err << "warning: " << q.location.size() - kept << " rows with missing values skipped\n";
          q.location.resize(kept);
          q.scale.resize(kept);
          q.shape.resize(kept);
          if (!q.alpha.empty()) q.alpha.resize(kept);
        }
      } else if (!params_path.empty()) {
        const auto params = DataTable::read_csv_file(params_path);
        q.family = parse_family(qev_family);
        const std::string loc = q.family == Family::gpd && params.has("threshold") ? "threshold" : "location";
        q.location = params.numeric(loc);
        q.scale = params.numeric("scale");
        q.shape = params.numeric("shape");
        const std::string w = weight_column.empty() && params.has("weight") ? "weight" : weight_column;
        if (!w.empty()) q.alpha = params.numeric(w);
      } else {
        throw SpecError("qev needs --params or --model");
      }
      std::vector<double> z;
      for (double p : qev_p) {
        q.p = p;
        z.push_back(qev(q));
      }
      DataTable t;
      t.add_column("p", qev_p);
      t.add_column("z", z);
      detail::write_table(t, pred_out, out);
      return kOk;
    }

    if (bm_cmd->parsed()) {
      const auto data = DataTable::read_csv_file(data_path, na_token);
      const auto bm = block_maxima(data, block_keys, value_column);
      for (const auto& w : bm.warnings) err << "warning: " << w << '\n';
      detail::write_table(bm.table, pred_out, out);
      return kOk;
    }

    if (ex_cmd->parsed()) {
      auto data = DataTable::read_csv_file(data_path, na_token);
      const auto& v = data.numeric(value_column);
      std::vector<double> e;
      if (!ex.threshold_column.empty()) {
        e = threshold_excesses(v, data.numeric(ex.threshold_column));
      } else if (ex.threshold) {
        e = threshold_excesses(v, *ex.threshold);
      } else {
        throw SpecError("excesses needs --threshold or --threshold-column");
      }
      if (data.has(excess_name)) throw SpecError("column '" + excess_name + "' already exists; use --name");
      data.add_column(excess_name, e);
      detail::write_table(data, pred_out, out);
      return kOk;
    }

    if (ei_cmd->parsed()) {
      const auto data = DataTable::read_csv_file(data_path, na_token);
      const auto& t = data.numeric(time_column);
      ExtremalIndexEstimate est;
      if (!value_column.empty()) {
        if (!ei_threshold) throw SpecError("--value needs --threshold");
        const auto& v = data.numeric(value_column);
        std::vector<bool> exceed(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) exceed[i] = v[i] > *ei_threshold;  // NA never exceeds
        est = extremal_index(t, exceed);
      } else {
        est = extremal_index(t);
      }
      const nlohmann::json j = {{"theta", est.theta},
                                {"branch", est.branch},
                                {"ratio", est.ratio},
                                {"n_exceedances", est.n_exceedances},
                                {"mean_cluster_size", est.mean_cluster_size()}};
      out << j.dump(2) << '\n';
      return kOk;
    }
  } catch (const SpecError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kFitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUnexpected;
}

}  // namespace evsmooth::cli
