#pragma once

// Shared fixtures for the test suites: toy designs, in-memory simulated
// datasets, scripted respondents, and an independent naive OLS + CR1
// implementation (plain std::vector arithmetic, no Eigen) used as the
// oracle for the clustered-variance path.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conjoint/config.hpp"
#include "conjoint/design.hpp"
#include "conjoint/oracle.hpp"
#include "conjoint/runner.hpp"

namespace testsupport {

inline std::filesystem::path configs_dir() {
#ifdef CONJOINT_CONFIGS_DIR
  return CONJOINT_CONFIGS_DIR;
#else
  return "configs";
#endif
}

inline std::filesystem::path cli_binary() {
#ifdef CONJOINT_CLI_BINARY
  return CONJOINT_CLI_BINARY;
#else
  return "conjoint";
#endif
}

inline conjoint::Design paper_design() { return conjoint::load_design(configs_dir() / "paper_design.json"); }

// k binary factors, s scenarios, minimal but valid texts.
inline conjoint::Design toy_design(int factors, int scenarios = 1) {
  conjoint::Design d;
  d.name = "toy";
  for (int s = 0; s < scenarios; ++s) {
    conjoint::Scenario scenario;
    scenario.key = "s" + std::to_string(s);
    scenario.label = "Scenario " + std::to_string(s);
    scenario.template_text = "Decide on policy " + std::to_string(s) + " given (ADDITION). Answer 0-100.";
    d.scenarios.push_back(std::move(scenario));
  }
  for (int f = 0; f < factors; ++f) {
    conjoint::Factor factor;
    factor.key = "f" + std::to_string(f);
    factor.display_name = "Factor " + std::to_string(f) + ":";
    factor.table_label = "F" + std::to_string(f);
    factor.high_text = "factor " + std::to_string(f) + " is high";
    factor.low_text = "factor " + std::to_string(f) + " is low";
    d.factors.push_back(std::move(factor));
  }
  return d;
}

// Runs the full plan/execute path against the oracle, in memory.
inline std::vector<conjoint::ResponseRecord> simulate_records(const conjoint::Design& design,
                                                              const conjoint::LatentModel& model,
                                                              long repetitions,
                                                              const std::string& model_name = "oracle-model") {
  const auto vignettes = conjoint::enumerate_vignettes(design);
  const auto schedule = conjoint::plan_runs(vignettes, repetitions, model_name);
  conjoint::MockRespondent respondent(model);
  conjoint::MemorySink sink;
  conjoint::ExecuteOptions options;
  options.params.model_name = model_name;
  options.deterministic_timestamps = true;
  conjoint::execute(schedule, design, vignettes, respondent, sink, options);
  return std::move(sink.records);
}

// A respondent scripted to fail or mis-answer on chosen calls.
class ScriptedRespondent : public conjoint::Respondent {
 public:
  // fail_every: every Nth call (0-based) raises TransportError.
  // garbage_every: every Nth call returns unparseable text.
  explicit ScriptedRespondent(int fail_every = 0, int garbage_every = 0)
      : fail_every_(fail_every), garbage_every_(garbage_every) {}

  conjoint::RawResponse respond(const conjoint::Vignette&, const conjoint::PromptBundle&,
                                const conjoint::QueryParams&, long) override {
    const long index = calls_++;
    if (fail_every_ > 0 && index % fail_every_ == 0)
      throw conjoint::TransportError("scripted failure at call " + std::to_string(index));
    conjoint::RawResponse r;
    r.provider = "scripted";
    r.text = garbage_every_ > 0 && index % garbage_every_ == 0 ? "not a number" : "55";
    return r;
  }

  long calls() const { return calls_; }

 private:
  int fail_every_;
  int garbage_every_;
  long calls_ = 0;
};

// Sink that throws after a fixed number of appends, simulating a crash with
// everything appended so far durable.
class AbortingSink : public conjoint::RecordSink {
 public:
  AbortingSink(conjoint::RecordSink& inner, long abort_after) : inner_(inner), abort_after_(abort_after) {}

  void append(const conjoint::ResponseRecord& record) override {
    if (appended_ >= abort_after_) throw conjoint::Error("simulated crash");
    inner_.append(record);
    ++appended_;
  }

 private:
  conjoint::RecordSink& inner_;
  long abort_after_;
  long appended_ = 0;
};

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("conjoint_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Random regression fixture with intercept, Gaussian regressors and modulo
// cluster assignment.  Resamples until cond(X) <= 1e3 so that a 1e-10
// cross-implementation comparison is meaningful in double precision.
struct RandomFixture {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  std::vector<int> cluster;
  int n = 0, k = 0, g = 0;
};

inline RandomFixture random_regression_fixture(std::mt19937_64& rng, int max_n = 60, int max_k = 5,
                                               int max_g = 10) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> n_dist(8, max_n);
  std::uniform_int_distribution<int> k_dist(1, max_k);
  std::uniform_int_distribution<int> g_dist(2, max_g);

  for (;;) {
    RandomFixture f;
    f.n = n_dist(rng);
    f.k = std::min(k_dist(rng), f.n - 2);
    f.g = std::min(g_dist(rng), f.n);
    f.x.assign(static_cast<std::size_t>(f.n), std::vector<double>(static_cast<std::size_t>(f.k)));
    f.y.assign(static_cast<std::size_t>(f.n), 0.0);
    f.cluster.assign(static_cast<std::size_t>(f.n), 0);

    Eigen::MatrixXd mat(f.n, f.k);
    for (int i = 0; i < f.n; ++i) {
      f.x[i][0] = 1.0;
      for (int j = 1; j < f.k; ++j) f.x[i][j] = normal(rng);
      for (int j = 0; j < f.k; ++j) mat(i, j) = f.x[i][j];
      f.y[i] = 2.0 * normal(rng) + (f.k > 1 ? 0.8 * f.x[i][1] : 0.0);
      f.cluster[i] = i % f.g;
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat);
    const double cond = svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
    if (cond <= 1e3) return f;
  }
}

// ---- independent OLS + CR1 oracle (no Eigen) -------------------------------------

struct NaiveFit {
  std::vector<double> beta;
  std::vector<double> se;
};

namespace detail {

// Gauss-Jordan inverse with partial pivoting, in extended precision so the
// oracle carries more digits than the double-precision path it checks.
inline std::vector<std::vector<long double>> invert(std::vector<std::vector<long double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<long double>> inv(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0L;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(static_cast<double>(a[r][col])) > std::fabs(static_cast<double>(a[pivot][col]))) pivot = r;
    if (std::fabs(static_cast<double>(a[pivot][col])) < 1e-14)
      throw std::runtime_error("naive invert: singular matrix");
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    const long double scale = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= scale;
      inv[col][j] /= scale;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double factor = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= factor * a[col][j];
        inv[r][j] -= factor * inv[col][j];
      }
    }
  }
  return inv;
}

}  // namespace detail

// OLS through the normal equations plus the CR1 sandwich, written as explicit
// double loops over long-double accumulators.  Deliberately a different route
// from the library's QR path.
inline NaiveFit naive_ols_cr1(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                              const std::vector<int>& cluster) {
  const std::size_t n = x.size();
  const std::size_t k = x[0].size();

  std::vector<std::vector<long double>> xtx(k, std::vector<long double>(k, 0.0L));
  std::vector<long double> xty(k, 0.0L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) {
      xty[a] += static_cast<long double>(x[i][a]) * y[i];
      for (std::size_t b = 0; b < k; ++b) xtx[a][b] += static_cast<long double>(x[i][a]) * x[i][b];
    }
  const auto bread = detail::invert(xtx);

  std::vector<long double> beta(k, 0.0L);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) beta[a] += bread[a][b] * xty[b];

  std::vector<long double> residual(n, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    long double fitted = 0.0L;
    for (std::size_t a = 0; a < k; ++a) fitted += x[i][a] * beta[a];
    residual[i] = y[i] - fitted;
  }

  int groups = 0;
  for (int c : cluster) groups = std::max(groups, c + 1);
  std::vector<std::vector<long double>> score(static_cast<std::size_t>(groups),
                                              std::vector<long double>(k, 0.0L));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) score[static_cast<std::size_t>(cluster[i])][a] += x[i][a] * residual[i];

  std::vector<std::vector<long double>> meat(k, std::vector<long double>(k, 0.0L));
  for (const auto& s : score)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) meat[a][b] += s[a] * s[b];

  const long double g = static_cast<long double>(groups);
  const long double correction =
      (g / (g - 1.0L)) * ((static_cast<long double>(n) - 1.0L) / (static_cast<long double>(n - k)));

  // V = correction * bread * meat * bread
  std::vector<std::vector<long double>> tmp(k, std::vector<long double>(k, 0.0L));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c) tmp[a][b] += bread[a][c] * meat[c][b];

  NaiveFit fit;
  fit.beta.assign(k, 0.0);
  fit.se.assign(k, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    long double v = 0.0L;
    for (std::size_t c = 0; c < k; ++c) v += tmp[a][c] * bread[c][a];
    fit.beta[a] = static_cast<double>(beta[a]);
    fit.se[a] = static_cast<double>(std::sqrt(correction * v));
  }
  return fit;
}

}  // namespace testsupport
