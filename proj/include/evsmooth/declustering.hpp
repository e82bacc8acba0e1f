#pragma once

// Extremal index estimation and extreme-data preparation: block maxima,
// threshold excesses and per-group r-largest order statistics.

#include "evsmooth/error.hpp"
#include "evsmooth/families.hpp"
#include "evsmooth/table.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evsmooth {

struct ExtremalIndexEstimate {
  double theta = 1.0;
  int branch = 1;  // 1: max T <= 2, 2: otherwise
  double ratio = 1.0;  // estimator before capping at 1
  std::vector<double> interexceedance;
  std::size_t n_exceedances = 0;
  double mean_cluster_size() const { return 1.0 / theta; }
};

// Ferro-Segers moment estimator from the time stamps of the exceedances.
inline ExtremalIndexEstimate extremal_index(const std::vector<double>& exceedance_times) {
  const std::size_t n = exceedance_times.size();
  if (n < 2) throw DataError("extremal index needs at least 2 exceedances, got " + std::to_string(n));
  ExtremalIndexEstimate est;
  est.n_exceedances = n;
  double tmax = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double t = exceedance_times[i] - exceedance_times[i - 1];
    if (!(t > 0.0)) throw DataError("exceedance time stamps must be strictly increasing");
    est.interexceedance.push_back(t);
    tmax = std::max(tmax, t);
  }
  const double m = static_cast<double>(n - 1);
  double num = 0.0;
  double den = 0.0;
  if (tmax <= 2.0) {
    est.branch = 1;
    for (double t : est.interexceedance) {
      num += t;
      den += t * t;
    }
  } else {
    est.branch = 2;
    for (double t : est.interexceedance) {
      num += t - 1.0;
      den += (t - 1.0) * (t - 2.0);
    }
  }
  est.ratio = den > 0.0 ? 2.0 * num * num / (m * den) : kInf;
  est.theta = std::min(1.0, est.ratio);
  return est;
}

// Exceedance indicator over a time series; time stamps must increase, and gaps
// in them (missing records) lengthen the interexceedance times.
inline ExtremalIndexEstimate extremal_index(const std::vector<double>& times, const std::vector<bool>& exceed) {
  if (times.size() != exceed.size()) throw DataError("time and exceedance vectors differ in length");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DataError("time stamps must be strictly increasing");
  }
  std::vector<double> t;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (exceed[i]) t.push_back(times[i]);
  return extremal_index(t);
}

struct BlockMaxima {
  DataTable table;  // key columns followed by the value column
  std::vector<std::string> warnings;
};

// One row per combination of the key columns, in order of first appearance.
inline BlockMaxima block_maxima(const DataTable& data, const std::vector<std::string>& keys,
                                const std::string& value) {
  const auto& v = data.numeric(value);
  std::vector<const std::vector<std::string>*> key_cols;
  for (const auto& k : keys) key_cols.push_back(&data.text(k));

  std::map<std::vector<std::string>, std::size_t> index;
  std::vector<std::vector<std::string>> order;
  std::vector<double> best;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    std::vector<std::string> key;
    for (const auto* c : key_cols) key.push_back((*c)[i]);
    auto [it, fresh] = index.emplace(key, order.size());
    if (fresh) {
      order.push_back(key);
      best.push_back(kNaN);
    }
    const double x = v[i];
    if (std::isnan(x)) continue;
    double& b = best[it->second];
    if (std::isnan(b) || x > b) b = x;
  }

  BlockMaxima out;
  std::vector<std::vector<std::string>> key_out(keys.size());
  std::vector<double> val_out;
  for (std::size_t g = 0; g < order.size(); ++g) {
    if (std::isnan(best[g])) {
      std::string label;
      for (std::size_t j = 0; j < keys.size(); ++j) label += (j ? "," : "") + keys[j] + "=" + order[g][j];
      out.warnings.push_back("block " + label + " has no non-missing values; dropped");
      continue;
    }
    for (std::size_t j = 0; j < keys.size(); ++j) key_out[j].push_back(order[g][j]);
    val_out.push_back(best[g]);
  }
  for (std::size_t j = 0; j < keys.size(); ++j) out.table.add_column(keys[j], std::move(key_out[j]));
  out.table.add_column(value, val_out);
  return out;
}

// value - threshold where strictly positive, NaN (missing) otherwise.
inline std::vector<double> threshold_excesses(const std::vector<double>& values,
                                              const std::vector<double>& thresholds) {
  if (values.size() != thresholds.size()) {
    throw DataError("values and thresholds differ in length (" + std::to_string(values.size()) + " vs " +
                    std::to_string(thresholds.size()) + ")");
  }
  std::vector<double> out(values.size(), kNaN);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = values[i] - thresholds[i];
    if (e > 0.0) out[i] = e;
  }
  return out;
}

inline std::vector<double> threshold_excesses(const std::vector<double>& values, double threshold) {
  return threshold_excesses(values, std::vector<double>(values.size(), threshold));
}

struct RLargest {
  std::vector<RLargestData> groups;
  std::vector<std::size_t> first_row;  // row of each group's first record
  std::vector<std::string> warnings;
};

// Per group (in order of first appearance), the top r values in descending
// order; r = -1 keeps them all. An empty group column puts every row in one
// group with id "".
inline RLargest r_largest(const DataTable& data, const std::string& group, const std::string& value, int r,
                          std::optional<double> ny, const std::map<std::string, double>& ny_by_id = {}) {
  if (r == 0 || r < -1) throw DataError("r must be >= 1 or -1");
  const auto& v = data.numeric(value);
  static const std::vector<std::string> none;
  const auto& ids = group.empty() ? none : data.text(group);

  RLargest out;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const std::string id = group.empty() ? std::string() : ids[i];
    auto [it, fresh] = index.emplace(id, out.groups.size());
    if (fresh) {
      RLargestData g;
      g.id = id;
      out.groups.push_back(std::move(g));
      out.first_row.push_back(i);
    }
    if (!std::isnan(v[i])) out.groups[it->second].values.push_back(v[i]);
  }
  if (!ny_by_id.empty()) {
    for (const auto& [id, _] : ny_by_id) {
      if (!index.count(id)) throw DataError("ny given for unknown group '" + id + "'");
    }
  }
  for (auto& g : out.groups) {
    if (!ny_by_id.empty()) {
      auto it = ny_by_id.find(g.id);
      if (it == ny_by_id.end()) throw DataError("no ny for group '" + g.id + "'");
      g.ny = it->second;
    } else if (ny) {
      g.ny = *ny;
    } else {
      throw DataError("ny is required");
    }
    std::sort(g.values.begin(), g.values.end(), std::greater<>());
    if (r > 0) {
      if (g.values.size() < static_cast<std::size_t>(r)) {
        out.warnings.push_back("group '" + g.id + "' has " + std::to_string(g.values.size()) +
                               " values, fewer than r = " + std::to_string(r) + "; using all");
      } else {
        g.values.resize(r);
      }
    }
  }
  RLargest kept;
  kept.warnings = std::move(out.warnings);
  for (std::size_t j = 0; j < out.groups.size(); ++j) {
    if (out.groups[j].values.empty()) {
      kept.warnings.push_back("group '" + out.groups[j].id + "' has no non-missing values; dropped");
      continue;
    }
    kept.groups.push_back(std::move(out.groups[j]));
    kept.first_row.push_back(out.first_row[j]);
  }
  return kept;
}

}  // namespace evsmooth
