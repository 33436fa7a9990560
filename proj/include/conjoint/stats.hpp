#pragma once

// The estimation core: dummy design-matrix construction, OLS via a QR
// decomposition, vignette-clustered (CR1) standard errors, fixed effects by
// explicit dummy expansion, summary statistics and cell means.
//
// Every entry point canonicalizes record order by (vignette_id, run_index,
// model_name) before computing, so reported numbers are invariant to the
// physical order of log records.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/prob.hpp"
#include "conjoint/runner.hpp"

namespace conjoint {

enum class FixedEffect { None, Scenario, Model };

inline std::string to_string(FixedEffect fe) {
  switch (fe) {
    case FixedEffect::None: return "none";
    case FixedEffect::Scenario: return "scenario";
    case FixedEffect::Model: return "model";
  }
  return "none";
}

inline FixedEffect fixed_effect_from_string(std::string_view s) {
  if (s == "none") return FixedEffect::None;
  if (s == "scenario") return FixedEffect::Scenario;
  if (s == "model") return FixedEffect::Model;
  throw InvalidConfig("unknown fixed effect '" + std::string(s) + "'");
}

enum class PReference { StudentT, Normal };

struct DesignMatrix {
  Eigen::MatrixXd X;                        // intercept, factor dummies, FE dummies
  std::vector<std::string> column_labels;
  Eigen::VectorXd y;
  std::vector<int> cluster_ids;             // dense vignette index, constant within a vignette
  int n_factor_columns = 0;                 // columns 1 .. n_factor_columns are factor dummies
  FixedEffect fixed_effect = FixedEffect::None;
  int fe_group_count = 0;                   // groups absorbed, including the reference

  int cluster_count() const {
    return cluster_ids.empty() ? 0 : 1 + *std::max_element(cluster_ids.begin(), cluster_ids.end());
  }
};

namespace detail {

inline std::vector<const ResponseRecord*> canonical_order(const std::vector<ResponseRecord>& records) {
  std::vector<const ResponseRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  std::sort(out.begin(), out.end(), [](const ResponseRecord* a, const ResponseRecord* b) {
    if (a->vignette_id != b->vignette_id) return a->vignette_id < b->vignette_id;
    if (a->run_index != b->run_index) return a->run_index < b->run_index;
    return a->model_name < b->model_name;
  });
  return out;
}

inline void require_valid(const std::vector<ResponseRecord>& records) {
  if (records.empty()) throw EmptyData("no records");
  for (const auto& r : records)
    if (r.status != RecordStatus::Valid || !r.score)
      throw Error("statistics require Valid records only (got status '" + to_string(r.status) + "')");
}

}  // namespace detail

// Splits a log into the analyzable records and the exclusion counts reported
// in table footers.
struct ValidSplit {
  std::vector<ResponseRecord> valid;
  long n_parse_failed = 0;
  long n_provider_error = 0;
};

inline ValidSplit filter_valid(const RunLog& log) {
  ValidSplit split;
  for (const auto& r : log.records) {
    switch (r.status) {
      case RecordStatus::Valid: split.valid.push_back(r); break;
      case RecordStatus::ParseFailed: ++split.n_parse_failed; break;
      case RecordStatus::ProviderError: ++split.n_provider_error; break;
    }
  }
  return split;
}

// One row per record; factor dummy = 1 iff High; fixed-effect dummies for all
// but the first group in canonical order (scenario: design order; model:
// lexicographic).  Cluster id = dense index of vignette_id.
inline DesignMatrix build_design_matrix(const std::vector<ResponseRecord>& records, const Design& design,
                                        FixedEffect fixed_effect) {
  detail::require_valid(records);
  const auto ordered = detail::canonical_order(records);

  std::set<std::string> scenarios_present;
  std::set<std::string> models_present;
  for (const auto* r : ordered) {
    scenarios_present.insert(r->scenario);
    models_present.insert(r->model_name);
  }
  if (fixed_effect == FixedEffect::None && scenarios_present.size() > 1)
    throw InvalidGrouping("records span multiple scenarios; use a scenario fixed effect");
  if (fixed_effect == FixedEffect::None && models_present.size() > 1)
    throw InvalidGrouping("records span multiple models; use a model fixed effect");
  if (fixed_effect == FixedEffect::Scenario && models_present.size() > 1)
    throw InvalidGrouping("scenario fixed effect requires a single model");
  if (fixed_effect == FixedEffect::Model && scenarios_present.size() > 1)
    throw InvalidGrouping("model fixed effect requires a single scenario");

  // Non-reference fixed-effect groups, canonical order.
  std::vector<std::string> fe_groups;
  if (fixed_effect == FixedEffect::Scenario) {
    for (const auto& s : design.scenarios)
      if (scenarios_present.count(s.key)) fe_groups.push_back(s.key);
    for (const auto& s : scenarios_present)
      if (!design.find_scenario(s)) throw DesignMismatch("records reference unknown scenario '" + s + "'");
  } else if (fixed_effect == FixedEffect::Model) {
    fe_groups.assign(models_present.begin(), models_present.end());
  }

  DesignMatrix m;
  m.fixed_effect = fixed_effect;
  m.fe_group_count = static_cast<int>(fe_groups.size());
  m.n_factor_columns = static_cast<int>(design.factors.size());

  const long n = static_cast<long>(ordered.size());
  const int k = 1 + m.n_factor_columns + std::max(0, m.fe_group_count - 1);
  m.X = Eigen::MatrixXd::Zero(n, k);
  m.y = Eigen::VectorXd(n);
  m.cluster_ids.resize(static_cast<std::size_t>(n));

  m.column_labels.push_back("(Intercept)");
  for (const auto& f : design.factors) m.column_labels.push_back(f.table_label + ", high");
  for (std::size_t g = 1; g < fe_groups.size(); ++g)
    m.column_labels.push_back(to_string(fixed_effect) + ": " + fe_groups[g]);

  std::map<std::string, int> group_column;  // group key -> column (reference absent)
  for (std::size_t g = 1; g < fe_groups.size(); ++g)
    group_column[fe_groups[g]] = 1 + m.n_factor_columns + static_cast<int>(g) - 1;

  std::map<std::string, int> cluster_index;
  for (const auto* r : ordered) cluster_index.emplace(r->vignette_id, 0);
  int next_cluster = 0;
  for (auto& [id, index] : cluster_index) index = next_cluster++;

  for (long i = 0; i < n; ++i) {
    const ResponseRecord& r = *ordered[static_cast<std::size_t>(i)];
    m.X(i, 0) = 1.0;
    for (int f = 0; f < m.n_factor_columns; ++f) {
      const auto& key = design.factors[static_cast<std::size_t>(f)].key;
      auto it = r.assignment.find(key);
      if (it == r.assignment.end())
        throw DesignMismatch("record " + r.vignette_id + " lacks factor '" + key + "'");
      m.X(i, 1 + f) = it->second == Level::High ? 1.0 : 0.0;
    }
    if (fixed_effect != FixedEffect::None) {
      const std::string& group = fixed_effect == FixedEffect::Scenario ? r.scenario : r.model_name;
      if (auto it = group_column.find(group); it != group_column.end()) m.X(i, it->second) = 1.0;
    }
    m.y(i) = static_cast<double>(*r.score);
    m.cluster_ids[static_cast<std::size_t>(i)] = cluster_index.at(r.vignette_id);
  }
  return m;
}

// ---- OLS -----------------------------------------------------------------------

struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  double r_squared = 0.0;
};

// Least squares via column-pivoted Householder QR; no normal-equation inverse.
inline OlsFit fit_ols(const DesignMatrix& m) {
  const Eigen::Index n = m.X.rows();
  const Eigen::Index k = m.X.cols();
  if (n == 0) throw EmptyData("empty design matrix");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.X);
  if (qr.rank() < k) {
    const auto& perm = qr.colsPermutation().indices();
    std::string dependents;
    for (Eigen::Index j = qr.rank(); j < k; ++j) {
      if (!dependents.empty()) dependents += ", ";
      dependents += m.column_labels[static_cast<std::size_t>(perm(j))];
    }
    throw RankDeficient("design matrix is rank deficient; dependent columns: " + dependents);
  }

  OlsFit fit;
  fit.coefficients = qr.solve(m.y);
  fit.residuals = m.y - m.X * fit.coefficients;

  const double mean = m.y.mean();
  const double sst = (m.y.array() - mean).matrix().squaredNorm();
  const double ssr = fit.residuals.squaredNorm();
  fit.r_squared = sst > 0 ? 1.0 - ssr / sst : (ssr <= 1e-24 ? 1.0 : 0.0);
  return fit;
}

// ---- clustered standard errors ---------------------------------------------------

struct CoefficientStats {
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  int cluster_count = 0;
};

// CR1 sandwich: (X'X)^-1 [ sum_g s_g s_g' ] (X'X)^-1 scaled by
// G/(G-1) * (N-1)/(N-K), with s_g = X_g' e_g.  p-values default to a
// Student-t reference with G-1 degrees of freedom.
inline CoefficientStats cluster_robust_se(const DesignMatrix& m, const Eigen::VectorXd& residuals,
                                          const Eigen::VectorXd& coefficients,
                                          PReference reference = PReference::StudentT) {
  const Eigen::Index n = m.X.rows();
  const Eigen::Index k = m.X.cols();
  const int g = m.cluster_count();
  if (g < 2) throw TooFewClusters("need at least 2 clusters, got " + std::to_string(g));
  if (k >= n) throw Error("more coefficients than observations");

  // Bread from the same orthogonal decomposition the fit uses:
  // X P = Q R  =>  (X'X)^-1 = P R^-1 R^-T P'.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.X);
  if (qr.rank() < k) throw RankDeficient("rank-deficient design matrix in cluster_robust_se");
  const Eigen::MatrixXd r_upper =
      qr.matrixQR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv = r_upper.inverse();
  const Eigen::MatrixXd bread =
      qr.colsPermutation() * (r_inv * r_inv.transpose()) * qr.colsPermutation().transpose();

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(g, k);  // row per cluster: X_g' e_g
  for (Eigen::Index i = 0; i < n; ++i)
    scores.row(m.cluster_ids[static_cast<std::size_t>(i)]) += residuals(i) * m.X.row(i);
  const Eigen::MatrixXd meat = scores.transpose() * scores;

  const double small_sample = (static_cast<double>(g) / (g - 1.0)) *
                              ((static_cast<double>(n) - 1.0) / (static_cast<double>(n - k)));
  const Eigen::MatrixXd covariance = small_sample * bread * meat * bread;

  CoefficientStats stats;
  stats.cluster_count = g;
  stats.se = covariance.diagonal().array().max(0.0).sqrt();
  stats.t = Eigen::VectorXd(k);
  stats.p = Eigen::VectorXd(k);
  const double df = static_cast<double>(g - 1);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (stats.se(j) > 0) {
      stats.t(j) = coefficients(j) / stats.se(j);
      stats.p(j) = reference == PReference::StudentT ? two_sided_p_t(stats.t(j), df)
                                                     : two_sided_p_normal(stats.t(j));
    } else {
      // Degenerate (zero-residual) fit: the point estimate is exact.
      stats.t(j) = coefficients(j) == 0 ? 0 : std::numeric_limits<double>::infinity();
      stats.p(j) = coefficients(j) == 0 ? 1.0 : 0.0;
    }
  }
  return stats;
}

// ---- regression table --------------------------------------------------------------

inline std::string significance_stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

struct CoefficientRow {
  std::string label;
  double estimate = 0.0;
  double clustered_se = 0.0;
  double p_value = 1.0;
  std::string stars;
};

struct RegressionTable {
  std::string title;
  std::vector<CoefficientRow> rows;  // factor dummies only; intercept and FE rows suppressed
  long n_obs = 0;
  double r_squared = 0.0;
  int cluster_count = 0;
  std::string fixed_effects;  // "", "scenario", "model"
  int fe_group_count = 0;
  long n_excluded_parse_failed = 0;
  long n_excluded_provider_error = 0;
};

inline RegressionTable conjoint_regression(const std::vector<ResponseRecord>& records, const Design& design,
                                           FixedEffect fixed_effect,
                                           PReference reference = PReference::StudentT) {
  const DesignMatrix m = build_design_matrix(records, design, fixed_effect);
  const OlsFit fit = fit_ols(m);
  const CoefficientStats stats = cluster_robust_se(m, fit.residuals, fit.coefficients, reference);

  RegressionTable table;
  table.n_obs = m.X.rows();
  table.r_squared = fit.r_squared;
  table.cluster_count = stats.cluster_count;
  table.fixed_effects = fixed_effect == FixedEffect::None ? "" : to_string(fixed_effect);
  table.fe_group_count = m.fe_group_count;
  for (int f = 0; f < m.n_factor_columns; ++f) {
    const Eigen::Index j = 1 + f;
    CoefficientRow row;
    row.label = m.column_labels[static_cast<std::size_t>(j)];
    row.estimate = fit.coefficients(j);
    row.clustered_se = stats.se(j);
    row.p_value = stats.p(j);
    row.stars = significance_stars(row.p_value);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---- summaries ----------------------------------------------------------------------

enum class GroupBy { Scenario, Model, Pooled };

inline GroupBy group_by_from_string(std::string_view s) {
  if (s == "scenario") return GroupBy::Scenario;
  if (s == "model") return GroupBy::Model;
  if (s == "pooled") return GroupBy::Pooled;
  throw InvalidConfig("unknown grouping '" + std::string(s) + "'");
}

struct SummaryRow {
  std::string label;
  double mean = 0.0;
  double std_dev = 0.0;  // sample (n-1); 0 when n = 1
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  long n = 0;
};

namespace detail {

inline SummaryRow summarize(const std::string& label, std::vector<double> values) {
  SummaryRow row;
  row.label = label;
  row.n = static_cast<long>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  row.mean = sum / static_cast<double>(row.n);
  if (row.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.std_dev = std::sqrt(ss / static_cast<double>(row.n - 1));
  }
  std::sort(values.begin(), values.end());
  row.min = values.front();
  row.max = values.back();
  const std::size_t h = values.size() / 2;
  row.median = values.size() % 2 == 1 ? values[h] : 0.5 * (values[h - 1] + values[h]);
  return row;
}

}  // namespace detail

// Group rows in canonical order (scenarios: design order; models:
// lexicographic), plus a final pooled row when there is more than one group.
inline std::vector<SummaryRow> summary_stats(const std::vector<ResponseRecord>& records, GroupBy group_by,
                                             const Design& design) {
  detail::require_valid(records);
  const auto ordered = detail::canonical_order(records);

  auto group_key = [&](const ResponseRecord& r) -> std::string {
    return group_by == GroupBy::Model ? r.model_name : r.scenario;
  };

  std::vector<SummaryRow> out;
  std::vector<double> pooled;
  pooled.reserve(ordered.size());
  for (const auto* r : ordered) pooled.push_back(static_cast<double>(*r->score));

  if (group_by == GroupBy::Pooled) {
    out.push_back(detail::summarize("Pooled sample", std::move(pooled)));
    return out;
  }

  std::map<std::string, std::vector<double>> groups;
  for (const auto* r : ordered) groups[group_key(*r)].push_back(static_cast<double>(*r->score));

  std::vector<std::pair<std::string, std::string>> order;  // (key, label)
  if (group_by == GroupBy::Scenario) {
    for (const auto& s : design.scenarios)
      if (groups.count(s.key)) order.emplace_back(s.key, s.label);
    for (const auto& [key, values] : groups) {
      (void)values;
      if (!design.find_scenario(key)) throw DesignMismatch("records reference unknown scenario '" + key + "'");
    }
  } else {
    for (const auto& [key, values] : groups) {
      (void)values;
      order.emplace_back(key, key);
    }
  }

  for (const auto& [key, label] : order) out.push_back(detail::summarize(label, std::move(groups[key])));
  if (order.size() > 1) out.push_back(detail::summarize("Pooled sample", std::move(pooled)));
  return out;
}

// ---- cell means -----------------------------------------------------------------------

struct CellMean {
  double mean = 0.0;
  long n = 0;
};

// Mean score over records matching every entry of the (possibly partial)
// condition.  An empty condition matches everything.
inline CellMean cell_means(const std::vector<ResponseRecord>& records, const FactorAssignment& condition,
                           const Design& design) {
  detail::require_valid(records);
  for (const auto& [key, level] : condition) {
    (void)level;
    if (!design.find_factor(key)) throw DesignMismatch("condition references unknown factor '" + key + "'");
  }

  const auto ordered = detail::canonical_order(records);
  double sum = 0.0;
  long n = 0;
  for (const auto* r : ordered) {
    bool match = true;
    for (const auto& [key, level] : condition) {
      auto it = r->assignment.find(key);
      if (it == r->assignment.end() || it->second != level) {
        match = false;
        break;
      }
    }
    if (match) {
      sum += static_cast<double>(*r->score);
      ++n;
    }
  }
  if (n == 0) throw EmptyCell("no records match the condition");
  return CellMean{sum / static_cast<double>(n), n};
}

// ---- JSON codecs (analysis artifacts) ----------------------------------------------------

inline nlohmann::json summary_row_to_json(const SummaryRow& r) {
  return {{"label", r.label}, {"mean", r.mean},   {"std_dev", r.std_dev}, {"median", r.median},
          {"min", r.min},     {"max", r.max},     {"n", r.n}};
}

inline SummaryRow summary_row_from_json(const nlohmann::json& j) {
  SummaryRow r;
  r.label = j.at("label").get<std::string>();
  r.mean = j.at("mean").get<double>();
  r.std_dev = j.at("std_dev").get<double>();
  r.median = j.at("median").get<double>();
  r.min = j.at("min").get<double>();
  r.max = j.at("max").get<double>();
  r.n = j.at("n").get<long>();
  return r;
}

inline nlohmann::json regression_table_to_json(const RegressionTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"label", r.label},
                    {"estimate", r.estimate},
                    {"clustered_se", r.clustered_se},
                    {"p_value", r.p_value},
                    {"stars", r.stars}});
  return {{"title", t.title},
          {"rows", rows},
          {"n_obs", t.n_obs},
          {"r_squared", t.r_squared},
          {"cluster_count", t.cluster_count},
          {"fixed_effects", t.fixed_effects},
          {"fe_group_count", t.fe_group_count},
          {"n_excluded_parse_failed", t.n_excluded_parse_failed},
          {"n_excluded_provider_error", t.n_excluded_provider_error}};
}

inline RegressionTable regression_table_from_json(const nlohmann::json& j) {
  RegressionTable t;
  t.title = j.at("title").get<std::string>();
  for (const auto& jr : j.at("rows")) {
    CoefficientRow r;
    r.label = jr.at("label").get<std::string>();
    r.estimate = jr.at("estimate").get<double>();
    r.clustered_se = jr.at("clustered_se").get<double>();
    r.p_value = jr.at("p_value").get<double>();
    r.stars = jr.at("stars").get<std::string>();
    t.rows.push_back(std::move(r));
  }
  t.n_obs = j.at("n_obs").get<long>();
  t.r_squared = j.at("r_squared").get<double>();
  t.cluster_count = j.at("cluster_count").get<int>();
  t.fixed_effects = j.at("fixed_effects").get<std::string>();
  t.fe_group_count = j.at("fe_group_count").get<int>();
  t.n_excluded_parse_failed = j.value("n_excluded_parse_failed", 0l);
  t.n_excluded_provider_error = j.value("n_excluded_provider_error", 0l);
  return t;
}

}  // namespace conjoint
