// Command-line front end for the conjoint experiment harness.
//
// Verbs: generate (vignettes + prompts), simulate (offline oracle run),
// run (live provider run, resumable), analyze (summary + regression tables),
// report (re-render tables from a saved analysis).
//
// Exit codes: 0 ok, 2 config error, 3 auth error, 4 empty data,
// 5 transport exhausted.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conjoint/config.hpp"
#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/oracle.hpp"
#include "conjoint/prompts.hpp"
#include "conjoint/report.hpp"
#include "conjoint/runner.hpp"
#include "conjoint/stats.hpp"
#include "conjoint/transport_httplib.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonFlags {
  std::string config_path;
  std::string out_dir_override;
  std::optional<long> seed_override;
};

conjoint::ExperimentConfig load_config(const CommonFlags& flags) {
  if (flags.config_path.empty()) throw conjoint::InvalidConfig("--config is required");
  auto config = conjoint::ExperimentConfig::load(flags.config_path);
  if (!flags.out_dir_override.empty()) config.out_dir = flags.out_dir_override;
  if (flags.seed_override) {
    config.seed = flags.seed_override;
    if (config.oracle) config.oracle->rng_seed = static_cast<std::uint64_t>(*flags.seed_override);
  }
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw conjoint::Error("cannot write " + path.string());
  out << text;
}

fs::path log_path_for(const conjoint::ExperimentConfig& config) {
  const std::string name = config.log_file ? *config.log_file : config.default_log_filename();
  fs::path p(name);
  return p.is_absolute() ? p : config.out_dir / p;
}

int cmd_generate(const CommonFlags& flags, bool dump_prompts, bool print_balance) {
  const auto config = load_config(flags);
  const auto design = conjoint::load_config_design(config);
  const auto vignettes = conjoint::enumerate_vignettes(design);

  fs::create_directories(config.out_dir);
  std::ofstream out(config.out_dir / "vignettes.jsonl", std::ios::binary);
  for (const auto& v : vignettes) {
    json line = {{"id", v.id}, {"scenario", v.scenario_key}, {"assignment", conjoint::assignment_to_json(v.assignment)}};
    out << line.dump() << '\n';
  }
  if (dump_prompts) {
    std::ofstream prompts(config.out_dir / "prompts.jsonl", std::ios::binary);
    for (const auto& v : vignettes) {
      const auto bundle = conjoint::render_vignette(v, design);
      json line = {{"id", v.id}, {"system", bundle.system_text}, {"user", bundle.user_text}};
      prompts << line.dump() << '\n';
    }
  }
  std::cout << vignettes.size() << " vignettes\n";
  if (print_balance) {
    const auto balance = conjoint::balance_report(design, vignettes);
    json jb = {{"total", balance.total}, {"balanced", balance.balanced()}, {"deviations", balance.deviations}};
    std::cout << jb.dump() << '\n';
  }
  return 0;
}

int run_schedule(const conjoint::ExperimentConfig& config, const conjoint::Design& design,
                 conjoint::Respondent& respondent, bool deterministic, int concurrency) {
  const auto vignettes = conjoint::enumerate_vignettes(design);
  const auto full = conjoint::plan_runs(vignettes, config.repetitions, config.model_name);
  const fs::path log_path = log_path_for(config);
  const auto remaining = conjoint::resume(full, log_path);
  std::cout << remaining.entries.size() << " remaining\n";

  conjoint::JsonlSink sink(log_path);
  conjoint::ExecuteOptions options;
  options.params = config.query_params();
  options.concurrency = concurrency;
  options.reask_limit = config.reask_limit;
  options.shuffle_seed = config.seed ? static_cast<std::uint64_t>(*config.seed) : 0;
  options.deterministic_timestamps = deterministic;

  const auto summary = conjoint::execute(remaining, design, vignettes, respondent, sink, options);
  std::cout << summary.to_json().dump() << '\n';
  if (summary.provider_error > 0) return 5;
  if (summary.parse_failed > 0) return 1;
  return 0;
}

int cmd_simulate(const CommonFlags& flags) {
  const auto config = load_config(flags);
  if (!config.oracle)
    throw conjoint::InvalidConfig("simulate requires an 'oracle' section in the config");
  const auto design = conjoint::load_config_design(config);
  // Oracle weights must be keyed exactly by the design factors.
  for (const auto& f : design.factors)
    if (!config.oracle->weights.count(f.key))
      throw conjoint::InvalidConfig("oracle has no weight for factor '" + f.key + "'");
  for (const auto& [key, weight] : config.oracle->weights) {
    (void)weight;
    if (!design.find_factor(key))
      throw conjoint::InvalidConfig("oracle weight '" + key + "' is not a design factor");
  }
  conjoint::MockRespondent respondent(*config.oracle);
  // Single worker + fixed timestamps: logs are byte-reproducible given the seed.
  return run_schedule(config, design, respondent, /*deterministic=*/true, /*concurrency=*/1);
}

int cmd_run(const CommonFlags& flags, const std::string& base_url_flag) {
  const auto config = load_config(flags);
  if (config.provider.empty()) throw conjoint::InvalidConfig("run requires a 'provider' in the config");
  const auto design = conjoint::load_config_design(config);

  conjoint::RetryPolicy retry;
  retry.max_attempts = config.retry.max_attempts;
  retry.initial_backoff = std::chrono::milliseconds(config.retry.initial_backoff_ms);
  retry.max_backoff = std::chrono::milliseconds(config.retry.max_backoff_ms);
  auto limiter = config.requests_per_second > 0
                     ? std::make_shared<conjoint::TokenBucket>(config.requests_per_second)
                     : nullptr;
  const std::string base_url = !base_url_flag.empty() ? base_url_flag : config.base_url.value_or("");

  // Credential check happens here, before any schedule work.
  auto provider = conjoint::make_live_provider(config.provider, base_url,
                                               std::chrono::milliseconds(config.timeout_ms), retry, limiter);
  return run_schedule(config, design, *provider, /*deterministic=*/false, config.concurrency);
}

struct AnalyzeFlags {
  std::vector<std::string> logs;
  std::string design_path;
  std::string group_by = "scenario";
  std::string fixed_effect = "auto";
  std::string format = "both";
  std::string p_reference;
};

void write_tables(const fs::path& out_dir, const std::string& format,
                  const std::vector<conjoint::SummaryRow>& summary_rows, const std::string& summary_title,
                  const std::vector<conjoint::RegressionTable>& regressions, const std::string& regression_title,
                  long excluded_parse, long excluded_provider) {
  auto emit = [&](conjoint::TableFormat fmt, const char* extension) {
    const auto summary = conjoint::render_summary_table(summary_rows, fmt, summary_title, excluded_parse,
                                                        excluded_provider);
    write_text(out_dir / (std::string("summary.") + extension), conjoint::rendered_file_text(summary));
    const auto regression = conjoint::render_regression_table(regressions, fmt, {}, regression_title);
    write_text(out_dir / (std::string("regression.") + extension), conjoint::rendered_file_text(regression));
    std::cout << "wrote " << (out_dir / (std::string("summary.") + extension)).string() << '\n';
    std::cout << "wrote " << (out_dir / (std::string("regression.") + extension)).string() << '\n';
  };
  if (format == "md" || format == "both") emit(conjoint::TableFormat::Markdown, "md");
  if (format == "csv" || format == "both") emit(conjoint::TableFormat::Csv, "csv");
}

int cmd_analyze(const CommonFlags& flags, const AnalyzeFlags& a) {
  conjoint::Design design;
  conjoint::ExperimentConfig config;
  bool have_config = !flags.config_path.empty();
  if (have_config) {
    config = load_config(flags);
    design = conjoint::load_design(config.design_file);  // full design; logs may span scenarios
  } else if (!a.design_path.empty()) {
    design = conjoint::load_design(a.design_path);
  } else {
    throw conjoint::InvalidConfig("analyze needs --config or --design");
  }
  const fs::path out_dir = !flags.out_dir_override.empty()
                               ? fs::path(flags.out_dir_override)
                               : (have_config ? config.out_dir : fs::path("out"));
  const std::string p_ref_name = !a.p_reference.empty() ? a.p_reference
                                 : have_config           ? config.p_reference
                                                         : "t";
  const auto p_reference =
      p_ref_name == "normal" ? conjoint::PReference::Normal : conjoint::PReference::StudentT;

  if (a.logs.empty()) throw conjoint::InvalidConfig("analyze needs at least one --log");
  conjoint::RunLog merged;
  for (const auto& path : a.logs) {
    auto log = conjoint::load_run_log(path);
    merged.records.insert(merged.records.end(), log.records.begin(), log.records.end());
  }
  auto split = conjoint::filter_valid(merged);
  if (split.valid.empty()) throw conjoint::EmptyData("no valid records in the supplied logs");

  // Duplicate valid keys across merged logs would double-count observations.
  std::set<std::tuple<std::string, long, std::string>> keys;
  for (const auto& r : split.valid)
    if (!keys.emplace(r.vignette_id, r.run_index, r.model_name).second)
      throw conjoint::InvalidConfig("duplicate valid record for (" + r.vignette_id + ", run " +
                                    std::to_string(r.run_index) + ", " + r.model_name +
                                    ") across the supplied logs");

  const auto group_by = conjoint::group_by_from_string(a.group_by);
  const auto summary_rows = conjoint::summary_stats(split.valid, group_by, design);

  // Per-group regressions without FE, plus a pooled FE column when pooling
  // spans more than one group.
  std::map<std::string, std::vector<conjoint::ResponseRecord>> groups;
  std::vector<std::pair<std::string, std::string>> group_order;  // key, label
  if (group_by == conjoint::GroupBy::Scenario) {
    for (const auto& r : split.valid) groups[r.scenario].push_back(r);
    for (const auto& s : design.scenarios)
      if (groups.count(s.key)) group_order.emplace_back(s.key, s.label);
  } else {
    for (const auto& r : split.valid) groups[r.model_name].push_back(r);
    for (const auto& [key, records] : groups) {
      (void)records;
      group_order.emplace_back(key, key);
    }
  }

  std::vector<conjoint::RegressionTable> regressions;
  for (const auto& [key, label] : group_order) {
    auto table = conjoint::conjoint_regression(groups[key], design, conjoint::FixedEffect::None, p_reference);
    table.title = label;
    regressions.push_back(std::move(table));
  }
  if (group_order.size() > 1) {
    conjoint::FixedEffect pooled_fe;
    if (a.fixed_effect == "auto")
      pooled_fe = group_by == conjoint::GroupBy::Model ? conjoint::FixedEffect::Model
                                                       : conjoint::FixedEffect::Scenario;
    else
      pooled_fe = conjoint::fixed_effect_from_string(a.fixed_effect);
    auto pooled = conjoint::conjoint_regression(split.valid, design, pooled_fe, p_reference);
    pooled.title = "Pooled";
    pooled.n_excluded_parse_failed = split.n_parse_failed;
    pooled.n_excluded_provider_error = split.n_provider_error;
    regressions.push_back(std::move(pooled));
  } else if (!regressions.empty()) {
    regressions.back().n_excluded_parse_failed = split.n_parse_failed;
    regressions.back().n_excluded_provider_error = split.n_provider_error;
  }

  const std::string dimension = group_by == conjoint::GroupBy::Model ? "model" : "scenario";
  const std::string summary_title = "Summary statistics by " + dimension;
  const std::string regression_title = "Regression results by " + dimension;

  json analysis;
  analysis["schema"] = "conjoint-analysis/1";
  analysis["group_by"] = dimension;
  analysis["summary_title"] = summary_title;
  analysis["regression_title"] = regression_title;
  analysis["summary_rows"] = json::array();
  for (const auto& row : summary_rows) analysis["summary_rows"].push_back(conjoint::summary_row_to_json(row));
  analysis["regressions"] = json::array();
  for (const auto& table : regressions)
    analysis["regressions"].push_back(conjoint::regression_table_to_json(table));
  analysis["excluded"] = {{"parse_failed", split.n_parse_failed}, {"provider_error", split.n_provider_error}};
  write_text(out_dir / "analysis.json", analysis.dump(2) + "\n");
  std::cout << "wrote " << (out_dir / "analysis.json").string() << '\n';

  write_tables(out_dir, a.format, summary_rows, summary_title, regressions, regression_title,
               split.n_parse_failed, split.n_provider_error);
  return 0;
}

int cmd_report(const std::string& analysis_path, const std::string& out_dir_flag, const std::string& format) {
  std::ifstream in(analysis_path);
  if (!in) throw conjoint::InvalidConfig("cannot open analysis file: " + analysis_path);
  json analysis;
  try {
    in >> analysis;
  } catch (const json::exception& e) {
    throw conjoint::InvalidConfig(std::string("malformed analysis file: ") + e.what());
  }

  std::vector<conjoint::SummaryRow> summary_rows;
  for (const auto& jr : analysis.at("summary_rows")) summary_rows.push_back(conjoint::summary_row_from_json(jr));
  std::vector<conjoint::RegressionTable> regressions;
  for (const auto& jt : analysis.at("regressions"))
    regressions.push_back(conjoint::regression_table_from_json(jt));
  const long excluded_parse = analysis.at("excluded").value("parse_failed", 0l);
  const long excluded_provider = analysis.at("excluded").value("provider_error", 0l);

  const fs::path out_dir = out_dir_flag.empty() ? fs::path(analysis_path).parent_path() : fs::path(out_dir_flag);
  write_tables(out_dir, format, summary_rows, analysis.value("summary_title", "Summary statistics"),
               regressions, analysis.value("regression_title", "Regression results"), excluded_parse,
               excluded_provider);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conjoint - full-factorial vignette experiments against LLM respondents"};
  app.require_subcommand(1);

  CommonFlags flags;
  long seed_value = 0;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* config_opt = cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    if (config_required) config_opt->required();
    cmd->add_option("--out-dir", flags.out_dir_override, "override the config's output directory");
    // each() runs at validation time, before the bound variable is written,
    // so the override is parsed from the raw token.
    cmd->add_option("--seed", seed_value, "override the config's seed")
        ->each([&](const std::string& raw) {
          try {
            flags.seed_override = std::stol(raw);
          } catch (const std::exception&) {
            // CLI11's own conversion rejects the token with a ParseError.
          }
        });
  };

  auto* generate = app.add_subcommand("generate", "enumerate vignettes and write vignettes.jsonl");
  bool dump_prompts = false, print_balance = false;
  add_common(generate, true);
  generate->add_flag("--dump-prompts", dump_prompts, "also write rendered prompts.jsonl");
  generate->add_flag("--balance", print_balance, "print the factorial balance summary");

  auto* simulate = app.add_subcommand("simulate", "execute the schedule against the config's oracle");
  add_common(simulate, true);

  auto* run = app.add_subcommand("run", "execute the schedule against the live provider");
  std::string base_url_flag;
  add_common(run, true);
  run->add_option("--base-url", base_url_flag, "override the provider base URL (e.g. a local fake)");

  auto* analyze = app.add_subcommand("analyze", "compute summary and regression tables from run logs");
  AnalyzeFlags analyze_flags;
  add_common(analyze, false);
  analyze->add_option("--log", analyze_flags.logs, "run log(s), JSONL")->required();
  analyze->add_option("--design", analyze_flags.design_path, "design file (alternative to --config)");
  analyze->add_option("--group-by", analyze_flags.group_by, "scenario | model")
      ->check(CLI::IsMember({"scenario", "model"}));
  analyze->add_option("--fixed-effect", analyze_flags.fixed_effect, "pooled-column FE: auto | none | scenario | model")
      ->check(CLI::IsMember({"auto", "none", "scenario", "model"}));
  analyze->add_option("--format", analyze_flags.format, "md | csv | both")
      ->check(CLI::IsMember({"md", "csv", "both"}));
  analyze->add_option("--p-reference", analyze_flags.p_reference, "t | normal")
      ->check(CLI::IsMember({"t", "normal"}));

  auto* report = app.add_subcommand("report", "re-render tables from a saved analysis.json");
  std::string analysis_path, report_out_dir, report_format = "both";
  report->add_option("--analysis", analysis_path, "analysis.json produced by analyze")->required();
  report->add_option("--out-dir", report_out_dir, "output directory (default: alongside the analysis)");
  report->add_option("--format", report_format, "md | csv | both")->check(CLI::IsMember({"md", "csv", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags, dump_prompts, print_balance);
    if (simulate->parsed()) return cmd_simulate(flags);
    if (run->parsed()) return cmd_run(flags, base_url_flag);
    if (analyze->parsed()) return cmd_analyze(flags, analyze_flags);
    if (report->parsed()) return cmd_report(analysis_path, report_out_dir, report_format);
  } catch (const conjoint::AuthError& e) {
    std::cerr << "auth error: " << e.what() << '\n';
    return 3;
  } catch (const conjoint::RateLimited& e) {
    std::cerr << "rate limited: " << e.what() << '\n';
    return 5;
  } catch (const conjoint::TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return 5;
  } catch (const conjoint::EmptyData& e) {
    std::cerr << "empty data: " << e.what() << '\n';
    return 4;
  } catch (const conjoint::EmptyCell& e) {
    std::cerr << "empty data: " << e.what() << '\n';
    return 4;
  } catch (const conjoint::CorruptLog& e) {
    std::cerr << "corrupt log: " << e.what() << '\n';
    return 2;
  } catch (const conjoint::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const conjoint::InvalidGrouping& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const conjoint::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
