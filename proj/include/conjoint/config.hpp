#pragma once

// Experiment configuration.  One JSON file drives every command; flags
// override the file; credentials come from the environment only, so configs
// can be committed.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/oracle.hpp"
#include "conjoint/providers.hpp"

namespace conjoint {

struct RetryConfig {
  int max_attempts = 5;
  int initial_backoff_ms = 500;
  int max_backoff_ms = 8000;
};

struct ExperimentConfig {
  std::filesystem::path design_file;
  std::string model_name;
  std::string provider;  // openai | anthropic | gemini
  long repetitions = 100;
  double temperature = 1.0;
  std::optional<long> seed;
  int max_tokens = 16;
  int timeout_ms = 30000;
  int concurrency = 8;
  double requests_per_second = 0.0;  // 0 = no limit
  int reask_limit = 2;
  std::string p_reference = "t";  // "t" | "normal"
  std::filesystem::path out_dir = "out";
  std::vector<std::string> scenario_filter;  // empty = all scenarios
  std::optional<std::string> base_url;
  std::optional<std::string> log_file;
  std::optional<LatentModel> oracle;
  RetryConfig retry;

  std::string default_log_filename() const {
    std::string name = "runs_";
    for (char c : model_name) name += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return name + ".jsonl";
  }

  QueryParams query_params() const {
    QueryParams p;
    p.model_name = model_name;
    p.temperature = temperature;
    p.seed = seed;
    p.max_tokens = max_tokens;
    p.timeout = std::chrono::milliseconds(timeout_ms);
    return p;
  }

  void validate() const {
    if (design_file.empty()) throw InvalidConfig("config missing design_file");
    if (model_name.empty()) throw InvalidConfig("config missing model_name");
    if (repetitions < 1) throw InvalidConfig("repetitions must be >= 1");
    if (concurrency < 1) throw InvalidConfig("concurrency must be >= 1");
    if (temperature < 0) throw InvalidConfig("temperature must be >= 0");
    if (max_tokens < 1) throw InvalidConfig("max_tokens must be >= 1");
    if (reask_limit < 0) throw InvalidConfig("reask_limit must be >= 0");
    if (p_reference != "t" && p_reference != "normal")
      throw InvalidConfig("p_reference must be 't' or 'normal'");
    if (!provider.empty()) provider_kind_from_string(provider);  // validates the name
  }

  static ExperimentConfig load(const std::filesystem::path& path);
};

inline ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config file " + path.string() + " is not valid JSON: " + e.what());
  }

  ExperimentConfig c;
  try {
    c.design_file = j.at("design_file").get<std::string>();
    c.model_name = j.value("model_name", "");
    c.provider = j.value("provider", "");
    c.repetitions = j.value("repetitions", 100l);
    c.temperature = j.value("temperature", 1.0);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<long>();
    c.max_tokens = j.value("max_tokens", 16);
    c.timeout_ms = j.value("timeout_ms", 30000);
    c.concurrency = j.value("concurrency", 8);
    c.requests_per_second = j.value("requests_per_second", 0.0);
    c.reask_limit = j.value("reask_limit", 2);
    c.p_reference = j.value("p_reference", "t");
    c.out_dir = std::filesystem::path(j.value("out_dir", "out"));
    if (j.contains("scenario_filter"))
      for (const auto& s : j["scenario_filter"]) c.scenario_filter.push_back(s.get<std::string>());
    if (j.contains("base_url") && !j["base_url"].is_null()) c.base_url = j["base_url"].get<std::string>();
    if (j.contains("log_file") && !j["log_file"].is_null()) c.log_file = j["log_file"].get<std::string>();
    if (j.contains("oracle") && !j["oracle"].is_null()) c.oracle = latent_model_from_json(j["oracle"]);
    if (j.contains("retry")) {
      c.retry.max_attempts = j["retry"].value("max_attempts", 5);
      c.retry.initial_backoff_ms = j["retry"].value("initial_backoff_ms", 500);
      c.retry.max_backoff_ms = j["retry"].value("max_backoff_ms", 8000);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config file " + path.string() + ": " + e.what());
  }

  // design_file and out_dir are relative to the config's directory.
  if (c.design_file.is_relative()) c.design_file = path.parent_path() / c.design_file;
  c.validate();
  return c;
}

// Loads the design named by the config and applies the scenario filter.
inline Design load_config_design(const ExperimentConfig& config) {
  Design design = load_design(config.design_file);
  if (!config.scenario_filter.empty()) {
    std::vector<Scenario> kept;
    for (const auto& key : config.scenario_filter) {
      const Scenario* s = design.find_scenario(key);
      if (!s) throw InvalidConfig("scenario_filter names unknown scenario '" + key + "'");
      kept.push_back(*s);
    }
    design.scenarios = std::move(kept);
  }
  return design;
}

}  // namespace conjoint
