#pragma once

// Plans and executes the repetition schedule (vignettes x runs) and persists
// every outcome to an append-only JSONL log, one record per line.
//
// Execution survives individual provider failures (they are recorded, not
// raised), re-asks on malformed completions up to a bounded limit, and is
// resumable: `resume` returns the sub-schedule with no Valid record yet.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/parser.hpp"
#include "conjoint/prompts.hpp"
#include "conjoint/providers.hpp"

namespace conjoint {

struct ScheduleEntry {
  std::string vignette_id;
  long run_index = 0;
};

struct RunSchedule {
  std::vector<ScheduleEntry> entries;  // full cross product, deterministic order
  long repetitions = 0;
  std::string model_name;
};

// Vignette-major, then run index.
inline RunSchedule plan_runs(const std::vector<Vignette>& vignettes, long repetitions,
                             std::string model_name) {
  if (repetitions < 1) throw InvalidConfig("repetitions must be >= 1");
  RunSchedule schedule;
  schedule.repetitions = repetitions;
  schedule.model_name = std::move(model_name);
  schedule.entries.reserve(vignettes.size() * static_cast<std::size_t>(repetitions));
  for (const auto& v : vignettes)
    for (long r = 0; r < repetitions; ++r) schedule.entries.push_back({v.id, r});
  return schedule;
}

// ---- response records -------------------------------------------------------------

enum class RecordStatus { Valid, ParseFailed, ProviderError };

inline std::string to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::Valid: return "valid";
    case RecordStatus::ParseFailed: return "parse_failed";
    case RecordStatus::ProviderError: return "provider_error";
  }
  return "unknown";
}

inline RecordStatus record_status_from_string(std::string_view s) {
  if (s == "valid") return RecordStatus::Valid;
  if (s == "parse_failed") return RecordStatus::ParseFailed;
  if (s == "provider_error") return RecordStatus::ProviderError;
  throw Error("unknown record status '" + std::string(s) + "'");
}

struct ResponseRecord {
  std::string vignette_id;
  long run_index = 0;
  std::string scenario;
  FactorAssignment assignment;
  std::string model_name;
  QueryParams params;
  std::string raw_text;
  std::optional<int> score;
  RecordStatus status = RecordStatus::ProviderError;
  std::optional<std::string> error_detail;
  std::string timestamp;  // ISO 8601 UTC
};

inline nlohmann::json record_to_json(const ResponseRecord& r) {
  nlohmann::json j;
  j["vignette_id"] = r.vignette_id;
  j["run_index"] = r.run_index;
  j["scenario"] = r.scenario;
  j["assignment"] = assignment_to_json(r.assignment);
  j["model_name"] = r.model_name;
  j["params"] = {{"temperature", r.params.temperature},
                 {"max_tokens", r.params.max_tokens},
                 {"timeout_ms", r.params.timeout.count()}};
  if (r.params.seed)
    j["params"]["seed"] = *r.params.seed;
  else
    j["params"]["seed"] = nullptr;
  j["raw_text"] = r.raw_text;
  j["score"] = r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr);
  j["status"] = to_string(r.status);
  j["error_detail"] = r.error_detail ? nlohmann::json(*r.error_detail) : nlohmann::json(nullptr);
  j["timestamp"] = r.timestamp;
  return j;
}

inline ResponseRecord record_from_json(const nlohmann::json& j) {
  ResponseRecord r;
  r.vignette_id = j.at("vignette_id").get<std::string>();
  r.run_index = j.at("run_index").get<long>();
  r.scenario = j.at("scenario").get<std::string>();
  r.assignment = assignment_from_json(j.at("assignment"));
  r.model_name = j.at("model_name").get<std::string>();
  const auto& p = j.at("params");
  r.params.model_name = r.model_name;
  r.params.temperature = p.at("temperature").get<double>();
  r.params.max_tokens = p.at("max_tokens").get<int>();
  r.params.timeout = std::chrono::milliseconds(p.at("timeout_ms").get<long>());
  if (p.contains("seed") && !p["seed"].is_null()) r.params.seed = p["seed"].get<long>();
  r.raw_text = j.at("raw_text").get<std::string>();
  if (!j.at("score").is_null()) r.score = j["score"].get<int>();
  r.status = record_status_from_string(j.at("status").get<std::string>());
  if ((r.status == RecordStatus::Valid) != r.score.has_value())
    throw Error("status/score mismatch");
  if (r.score && (*r.score < 0 || *r.score > 100)) throw Error("score out of range");
  if (!j.at("error_detail").is_null()) r.error_detail = j["error_detail"].get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

// ---- sinks ---------------------------------------------------------------------

class RecordSink {
 public:
  virtual ~RecordSink() = default;
  // Must be durable once it returns; called under the runner's writer lock.
  virtual void append(const ResponseRecord& record) = 0;
};

class JsonlSink : public RecordSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw Error("cannot open run log for append: " + path.string());
  }

  void append(const ResponseRecord& record) override {
    out_ << record_to_json(record).dump() << '\n';
    out_.flush();
    if (!out_) throw Error("write failure on run log: " + path_.string());
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class MemorySink : public RecordSink {
 public:
  void append(const ResponseRecord& record) override { records.push_back(record); }
  std::vector<ResponseRecord> records;
};

// ---- log loading & resume ----------------------------------------------------------

struct RunLog {
  std::vector<ResponseRecord> records;

  long count(RecordStatus status) const {
    long n = 0;
    for (const auto& r : records)
      if (r.status == status) ++n;
    return n;
  }
};

// A malformed newline-terminated line raises CorruptLog with its 1-based line
// number.  A final line without a trailing newline that fails to parse is
// treated as in-flight loss from a crash and dropped.
inline RunLog load_run_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open run log: " + path.string());

  RunLog log;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const bool newline_terminated = !in.eof();
    if (line.empty()) {
      if (newline_terminated) throw CorruptLog(line_number, "blank line");
      break;
    }
    try {
      log.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      if (!newline_terminated) break;  // truncated tail from a crash
      throw CorruptLog(line_number, e.what());
    }
  }
  return log;
}

// Sub-schedule of entries with no Valid record yet.  ParseFailed and
// ProviderError keys are re-queued; Valid keys never re-run.
inline RunSchedule resume(const RunSchedule& schedule, const RunLog& existing) {
  std::set<std::pair<std::string, long>> done;
  for (const auto& r : existing.records)
    if (r.status == RecordStatus::Valid && r.model_name == schedule.model_name)
      done.emplace(r.vignette_id, r.run_index);

  RunSchedule remaining;
  remaining.repetitions = schedule.repetitions;
  remaining.model_name = schedule.model_name;
  for (const auto& e : schedule.entries)
    if (!done.count({e.vignette_id, e.run_index})) remaining.entries.push_back(e);
  return remaining;
}

inline RunSchedule resume(const RunSchedule& schedule, const std::filesystem::path& log_path) {
  if (!std::filesystem::exists(log_path)) return schedule;
  return resume(schedule, load_run_log(log_path));
}

// ---- execution ----------------------------------------------------------------------

struct ExecuteOptions {
  QueryParams params;
  int concurrency = 1;
  int reask_limit = 2;  // immediate re-asks on a malformed completion
  std::uint64_t shuffle_seed = 0;
  bool deterministic_timestamps = false;  // fixed epoch stamp for simulated runs
};

struct ExecutionSummary {
  long valid = 0;
  long parse_failed = 0;
  long provider_error = 0;

  long total() const { return valid + parse_failed + provider_error; }

  nlohmann::json to_json() const {
    return {{"valid", valid},
            {"parse_failed", parse_failed},
            {"provider_error", provider_error},
            {"total", total()}};
  }
};

namespace detail {

inline std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms.count()));
  return buf;
}

inline constexpr const char* kEpochTimestamp = "1970-01-01T00:00:00.000Z";

}  // namespace detail

// Runs every schedule entry against `respondent`, appending exactly one
// ResponseRecord per entry to `sink`.  Provider failures are recorded;
// sink failures abort the batch (already-appended records stay durable).
// Submission order is a seeded shuffle of the schedule; with concurrency 1
// the log order is exactly that shuffled order.
inline ExecutionSummary execute(const RunSchedule& schedule, const Design& design,
                                const std::vector<Vignette>& vignettes, Respondent& respondent,
                                RecordSink& sink, const ExecuteOptions& options) {
  if (options.concurrency < 1) throw InvalidConfig("concurrency must be >= 1");

  std::unordered_map<std::string, const Vignette*> by_id;
  by_id.reserve(vignettes.size());
  for (const auto& v : vignettes) by_id[v.id] = &v;

  // Render each referenced vignette once; prompts are pure.
  std::unordered_map<std::string, PromptBundle> prompts;
  for (const auto& entry : schedule.entries) {
    if (prompts.count(entry.vignette_id)) continue;
    auto it = by_id.find(entry.vignette_id);
    if (it == by_id.end()) throw Error("schedule references unknown vignette '" + entry.vignette_id + "'");
    prompts.emplace(entry.vignette_id, render_vignette(*it->second, design));
  }

  std::vector<std::size_t> order(schedule.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(options.shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  ExecutionSummary summary;
  std::mutex sink_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr sink_failure;

  auto worker = [&] {
    for (;;) {
      if (stop.load(std::memory_order_relaxed)) return;
      const std::size_t slot = next.fetch_add(1);
      if (slot >= order.size()) return;
      const ScheduleEntry& entry = schedule.entries[order[slot]];
      const Vignette& vignette = *by_id.at(entry.vignette_id);
      const PromptBundle& prompt = prompts.at(entry.vignette_id);

      ResponseRecord record;
      record.vignette_id = entry.vignette_id;
      record.run_index = entry.run_index;
      record.scenario = vignette.scenario_key;
      record.assignment = vignette.assignment;
      record.model_name = schedule.model_name;
      record.params = options.params;

      int asks = 0;
      for (;;) {
        ++asks;
        try {
          const RawResponse response = respondent.respond(vignette, prompt, options.params, entry.run_index);
          record.raw_text = response.text;
          const ParseOutcome outcome = parse_score(response.text);
          if (outcome.ok()) {
            record.score = outcome.score;
            record.status = RecordStatus::Valid;
            record.error_detail.reset();
          } else {
            record.score.reset();
            record.status = RecordStatus::ParseFailed;
            record.error_detail = to_string(*outcome.failure);
          }
        } catch (const std::exception& e) {
          record.raw_text.clear();
          record.score.reset();
          record.status = RecordStatus::ProviderError;
          record.error_detail = e.what();
        }
        if (record.status != RecordStatus::ParseFailed || asks > options.reask_limit) break;
      }
      record.timestamp =
          options.deterministic_timestamps ? detail::kEpochTimestamp : detail::utc_timestamp_now();

      std::lock_guard lock(sink_mutex);
      if (stop.load(std::memory_order_relaxed)) return;
      try {
        sink.append(record);
      } catch (...) {
        sink_failure = std::current_exception();
        stop.store(true, std::memory_order_relaxed);
        return;
      }
      switch (record.status) {
        case RecordStatus::Valid: ++summary.valid; break;
        case RecordStatus::ParseFailed: ++summary.parse_failed; break;
        case RecordStatus::ProviderError: ++summary.provider_error; break;
      }
    }
  };

  if (options.concurrency == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(options.concurrency));
    for (int i = 0; i < options.concurrency; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (sink_failure) std::rethrow_exception(sink_failure);
  return summary;
}

}  // namespace conjoint
