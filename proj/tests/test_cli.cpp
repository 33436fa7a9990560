#include <catch2/catch.hpp>

// test_helpers pulls Eigen, which must precede httplib's system headers.
#include "support/test_helpers.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>

#include <json.hpp>

#include "conjoint/runner.hpp"
#include "conjoint/transport_httplib.hpp"

using nlohmann::json;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_command(const std::string& command) {
  CommandResult result;
  const std::string full = command + " 2>&1";
  FILE* pipe = ::popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buffer[4096];
  while (std::size_t n = std::fread(buffer, 1, sizeof buffer, pipe)) result.output.append(buffer, n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string cli() { return testsupport::cli_binary().string(); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small offline config: paper design, oracle respondent, 2 repetitions.
std::filesystem::path write_sim_config(const std::filesystem::path& dir, long repetitions = 2, long seed = 42) {
  json config;
  config["design_file"] = (testsupport::configs_dir() / "paper_design.json").string();
  config["model_name"] = "sim-model";
  config["repetitions"] = repetitions;
  config["seed"] = seed;
  config["out_dir"] = (dir / "out").string();
  config["oracle"] = {{"base", 61.4},
                      {"weights",
                       {{"growth", 1.5},
                        {"inequality", -7.0},
                        {"environment", -7.2},
                        {"debt", -4.5},
                        {"inflation", -3.5},
                        {"unemployment", -8.0},
                        {"finstability", -6.3}}},
                      {"scenario_offsets", json::object()},
                      {"noise_sd", 5.0},
                      {"rng_seed", seed}};
  const auto path = dir / "sim.json";
  std::ofstream(path) << config.dump(2);
  return path;
}

}  // namespace

TEST_CASE("generate prints the vignette count and writes vignettes.jsonl") {
  testsupport::TempDir dir("cli_generate");
  const auto config = write_sim_config(dir.path);
  const auto result = run_command(cli() + " generate --config " + config.string());
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("640 vignettes") != std::string::npos);

  std::ifstream lines(dir.path / "out" / "vignettes.jsonl");
  std::string line;
  int count = 0;
  std::set<std::string> ids;
  while (std::getline(lines, line)) {
    ++count;
    ids.insert(json::parse(line).at("id").get<std::string>());
  }
  CHECK(count == 640);
  CHECK(ids.size() == 640);
}

TEST_CASE("generate with a missing design file exits 2 naming the path") {
  testsupport::TempDir dir("cli_missing");
  const auto config_path = dir.path / "bad.json";
  std::ofstream(config_path) << R"({"design_file": "nowhere/missing_design.json", "model_name": "x"})";
  const auto result = run_command(cli() + " generate --config " + config_path.string());
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("missing_design.json") != std::string::npos);
}

TEST_CASE("simulate is deterministic and resumable; analyze produces the tables") {
  testsupport::TempDir dir("cli_pipeline");
  const auto config = write_sim_config(dir.path);
  const auto log_path = dir.path / "out" / "runs_sim_model.jsonl";

  const auto first = run_command(cli() + " simulate --config " + config.string());
  REQUIRE(first.exit_code == 0);
  CHECK(first.output.find("1280 remaining") != std::string::npos);
  const std::string log_bytes = read_file(log_path);
  CHECK_FALSE(log_bytes.empty());

  SECTION("re-invocation on a complete log is a no-op") {
    const auto second = run_command(cli() + " simulate --config " + config.string());
    CHECK(second.exit_code == 0);
    CHECK(second.output.find("0 remaining") != std::string::npos);
    CHECK(read_file(log_path) == log_bytes);
  }

  SECTION("same seed reproduces the log byte for byte") {
    testsupport::TempDir dir2("cli_pipeline_b");
    const auto config2 = write_sim_config(dir2.path);
    const auto rerun = run_command(cli() + " simulate --config " + config2.string());
    REQUIRE(rerun.exit_code == 0);
    CHECK(read_file(dir2.path / "out" / "runs_sim_model.jsonl") == log_bytes);
  }

  SECTION("a different seed changes the log") {
    testsupport::TempDir dir3("cli_pipeline_c");
    const auto config3 = write_sim_config(dir3.path, 2, 77);
    REQUIRE(run_command(cli() + " simulate --config " + config3.string()).exit_code == 0);
    CHECK(read_file(dir3.path / "out" / "runs_sim_model.jsonl") != log_bytes);
  }

  SECTION("--seed overrides the config seed") {
    // config written with seed 99 but run with --seed 42 must reproduce the
    // seed-42 log exactly.
    testsupport::TempDir dir4("cli_pipeline_d");
    const auto config4 = write_sim_config(dir4.path, 2, 99);
    REQUIRE(run_command(cli() + " simulate --config " + config4.string() + " --seed 42").exit_code == 0);
    CHECK(read_file(dir4.path / "out" / "runs_sim_model.jsonl") == log_bytes);
  }

  SECTION("analyze writes summary, regression, and analysis artifacts") {
    const auto result = run_command(cli() + " analyze --config " + config.string() + " --log " +
                                    log_path.string() + " --group-by scenario");
    REQUIRE(result.exit_code == 0);
    for (const char* name : {"summary.md", "summary.csv", "regression.md", "regression.csv", "analysis.json"})
      CHECK(std::filesystem::exists(dir.path / "out" / name));

    const json analysis = json::parse(read_file(dir.path / "out" / "analysis.json"));
    REQUIRE(analysis.at("regressions").size() == 6);  // five scenarios + pooled
    CHECK(analysis["regressions"][5]["title"] == "Pooled");
    CHECK(analysis["regressions"][5]["fixed_effects"] == "scenario");
    CHECK(analysis["regressions"][0]["rows"].size() == 7);
    REQUIRE(analysis.at("summary_rows").size() == 6);  // five scenarios + pooled row

    const std::string regression_md = read_file(dir.path / "out" / "regression.md");
    CHECK(regression_md.find("| Fiscal stimulus |") != std::string::npos);
    CHECK(regression_md.find("Unemployment, high") != std::string::npos);

    SECTION("report re-renders identical tables from analysis.json") {
      const std::string summary_before = read_file(dir.path / "out" / "summary.md");
      const std::string regression_before = read_file(dir.path / "out" / "regression.csv");
      const auto report_dir = dir.path / "rerender";
      const auto report = run_command(cli() + " report --analysis " +
                                      (dir.path / "out" / "analysis.json").string() + " --out-dir " +
                                      report_dir.string());
      REQUIRE(report.exit_code == 0);
      CHECK(read_file(report_dir / "summary.md") == summary_before);
      CHECK(read_file(report_dir / "regression.csv") == regression_before);
    }
  }

  SECTION("analyze with the normal p reference also succeeds") {
    const auto result = run_command(cli() + " analyze --config " + config.string() + " --log " +
                                    log_path.string() + " --p-reference normal --format csv");
    CHECK(result.exit_code == 0);
  }
}

TEST_CASE("analyze rejects the same log supplied twice") {
  testsupport::TempDir dir("cli_duplicate");
  const auto config = write_sim_config(dir.path);
  REQUIRE(run_command(cli() + " simulate --config " + config.string()).exit_code == 0);
  const auto log_path = (dir.path / "out" / "runs_sim_model.jsonl").string();

  const auto result = run_command(cli() + " analyze --config " + config.string() + " --log " + log_path +
                                  " --log " + log_path);
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("duplicate valid record") != std::string::npos);
}

TEST_CASE("analyze without valid records exits 4") {
  testsupport::TempDir dir("cli_empty");
  const auto config = write_sim_config(dir.path);

  conjoint::ResponseRecord bad;
  bad.vignette_id = "fiscal-b0000000";
  bad.run_index = 0;
  bad.scenario = "fiscal";
  bad.model_name = "sim-model";
  bad.raw_text = "garbage";
  bad.status = conjoint::RecordStatus::ParseFailed;
  bad.error_detail = "non_numeric";
  bad.timestamp = "1970-01-01T00:00:00.000Z";
  const auto log_path = dir.path / "failed.jsonl";
  std::ofstream(log_path) << conjoint::record_to_json(bad).dump() << '\n';

  const auto result =
      run_command(cli() + " analyze --config " + config.string() + " --log " + log_path.string());
  CHECK(result.exit_code == 4);
}

TEST_CASE("run without credentials exits 3 before any schedule work") {
  testsupport::TempDir dir("cli_auth");
  json config;
  config["design_file"] = (testsupport::configs_dir() / "paper_design.json").string();
  config["model_name"] = "gpt-4o-mini";
  config["provider"] = "openai";
  config["repetitions"] = 1;
  config["out_dir"] = (dir.path / "out").string();
  const auto config_path = dir.path / "live.json";
  std::ofstream(config_path) << config.dump();

  const auto result =
      run_command("env -u OPENAI_API_KEY " + cli() + " run --config " + config_path.string());
  CHECK(result.exit_code == 3);
  CHECK(result.output.find("OPENAI_API_KEY") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir.path / "out" / "runs_gpt_4o_mini.jsonl"));
}

TEST_CASE("generate reports the toy-design cardinality") {
  testsupport::TempDir dir("cli_toy");
  const auto design = testsupport::toy_design(3, 1);
  const auto design_path = dir.path / "toy_design.json";
  std::ofstream(design_path) << conjoint::design_to_json(design).dump(2);

  json config;
  config["design_file"] = design_path.string();
  config["model_name"] = "toy";
  config["out_dir"] = (dir.path / "out").string();
  config["oracle"] = {{"base", 50.0}, {"weights", {{"f0", 0.0}, {"f1", 0.0}, {"f2", 0.0}}}};
  const auto config_path = dir.path / "toy.json";
  std::ofstream(config_path) << config.dump();

  const auto result = run_command(cli() + " generate --config " + config_path.string());
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("8 vignettes") != std::string::npos);
}

TEST_CASE("run executes against a local fake provider and resumes to zero") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    json reply;
    reply["id"] = "chatcmpl-fake";
    reply["choices"] = json::array({{{"message", {{"role", "assistant"}, {"content", "57"}}}}});
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  testsupport::TempDir dir("cli_run_fake");
  json config;
  config["design_file"] = (testsupport::configs_dir() / "paper_design.json").string();
  config["model_name"] = "gpt-4o-mini";
  config["provider"] = "openai";
  config["repetitions"] = 2;
  config["concurrency"] = 4;
  config["scenario_filter"] = json::array({"fiscal"});
  config["out_dir"] = (dir.path / "out").string();
  const auto config_path = dir.path / "live.json";
  std::ofstream(config_path) << config.dump();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  const auto result = run_command("env OPENAI_API_KEY=local-fake-key " + cli() + " run --config " +
                                  config_path.string() + " --base-url " + base);
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("256 remaining") != std::string::npos);

  const auto log = conjoint::load_run_log(dir.path / "out" / "runs_gpt_4o_mini.jsonl");
  REQUIRE(log.records.size() == 256);
  for (const auto& r : log.records) {
    CHECK(r.status == conjoint::RecordStatus::Valid);
    CHECK(r.score == 57);
    CHECK(r.scenario == "fiscal");
  }

  const auto rerun = run_command("env OPENAI_API_KEY=local-fake-key " + cli() + " run --config " +
                                 config_path.string() + " --base-url " + base);
  CHECK(rerun.exit_code == 0);
  CHECK(rerun.output.find("0 remaining") != std::string::npos);

  server.stop();
  server_thread.join();
}

TEST_CASE("simulate rejects an oracle whose weights do not match the design") {
  testsupport::TempDir dir("cli_bad_oracle");
  json config;
  config["design_file"] = (testsupport::configs_dir() / "paper_design.json").string();
  config["model_name"] = "sim-model";
  config["repetitions"] = 1;
  config["out_dir"] = (dir.path / "out").string();
  config["oracle"] = {{"base", 50.0}, {"weights", {{"growth", 1.0}}}};  // six factors missing
  const auto config_path = dir.path / "sim.json";
  std::ofstream(config_path) << config.dump();

  const auto result = run_command(cli() + " simulate --config " + config_path.string());
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("no weight for factor") != std::string::npos);
}

TEST_CASE("an unreachable provider exhausts transport and exits 5") {
  testsupport::TempDir dir("cli_unreachable");
  json config;
  config["design_file"] = (testsupport::configs_dir() / "paper_design.json").string();
  config["model_name"] = "gpt-4o-mini";
  config["provider"] = "openai";
  config["repetitions"] = 1;
  config["concurrency"] = 4;
  config["scenario_filter"] = json::array({"fiscal"});
  config["retry"] = {{"max_attempts", 2}, {"initial_backoff_ms", 1}, {"max_backoff_ms", 2}};
  config["out_dir"] = (dir.path / "out").string();
  const auto config_path = dir.path / "live.json";
  std::ofstream(config_path) << config.dump();

  // Nothing listens on this port; every call fails at the transport layer
  // and is recorded as a provider error.
  const auto result = run_command("env OPENAI_API_KEY=x " + cli() + " run --config " + config_path.string() +
                                  " --base-url http://127.0.0.1:9");
  CHECK(result.exit_code == 5);

  const auto log = conjoint::load_run_log(dir.path / "out" / "runs_gpt_4o_mini.jsonl");
  REQUIRE(log.records.size() == 128);
  for (const auto& r : log.records) CHECK(r.status == conjoint::RecordStatus::ProviderError);
}

TEST_CASE("a killed simulate resumes to exactly one valid record per key") {
  testsupport::TempDir dir("cli_kill");
  const auto config = write_sim_config(dir.path, /*repetitions=*/40);
  const auto log_path = dir.path / "out" / "runs_sim_model.jsonl";

  // SIGKILL the process partway through; timing is best-effort and every
  // outcome (killed early, killed late, finished) must satisfy the property.
  run_command("( " + cli() + " simulate --config " + config.string() +
              " >/dev/null & CPID=$!; sleep 0.4; kill -9 $CPID 2>/dev/null; wait $CPID 2>/dev/null; true )");

  const auto resumed = run_command(cli() + " simulate --config " + config.string());
  REQUIRE(resumed.exit_code == 0);

  const auto log = conjoint::load_run_log(log_path);
  std::set<std::pair<std::string, long>> keys;
  long valid = 0;
  for (const auto& r : log.records) {
    if (r.status != conjoint::RecordStatus::Valid) continue;
    ++valid;
    CHECK(keys.emplace(r.vignette_id, r.run_index).second);
  }
  CHECK(valid == 640 * 40);
  CHECK(keys.size() == 640u * 40u);
}
