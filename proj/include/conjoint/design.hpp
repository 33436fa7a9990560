#pragma once

// The factor space of the experiment and its full-factorial enumeration.
//
// A Design holds an ordered list of scenarios (policy templates) and an
// ordered list of binary factors (projected policy outcomes, High/Low).
// Enumeration walks scenarios in design order and, within a scenario, counts
// through the 2^k factor combinations in binary order with factor 0 as the
// most significant bit and Low=0/High=1.  The vignette id
// "<scenario>-b<bitstring>" is a pure function of that position, so ids are
// stable across runs and platforms.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conjoint/errors.hpp"

namespace conjoint {

enum class Level { Low, High };

inline std::string to_string(Level level) { return level == Level::High ? "High" : "Low"; }

inline Level level_from_string(std::string_view s) {
  if (s == "High") return Level::High;
  if (s == "Low") return Level::Low;
  throw InvalidConfig("unknown level '" + std::string(s) + "' (expected High or Low)");
}

// One binary outcome dimension.  display_name is the heading used inside the
// prompt ("GDP growth effect:"); table_label is the row stem used in
// regression and summary tables ("Growth").
struct Factor {
  std::string key;
  std::string display_name;
  std::string table_label;
  std::string high_text;
  std::string low_text;
};

// One policy template.  The template carries exactly one ADDITION placeholder
// where the factor block is inserted; label is the table row name
// ("Fiscal stimulus").
struct Scenario {
  std::string key;
  std::string label;
  std::string template_text;
};

// Exactly one level per design factor.
using FactorAssignment = std::map<std::string, Level>;

struct Vignette {
  std::string scenario_key;
  FactorAssignment assignment;
  std::string id;
};

enum class AdditionMarkup { Plain, Html };

inline std::string to_string(AdditionMarkup markup) {
  return markup == AdditionMarkup::Html ? "html" : "plain";
}

inline AdditionMarkup markup_from_string(std::string_view s) {
  if (s == "plain") return AdditionMarkup::Plain;
  if (s == "html") return AdditionMarkup::Html;
  throw InvalidConfig("unknown markup '" + std::string(s) + "' (expected plain or html)");
}

inline constexpr std::string_view kAdditionPlaceholder = "ADDITION";

struct Design {
  std::string name;
  AdditionMarkup markup = AdditionMarkup::Plain;
  std::vector<Scenario> scenarios;
  std::vector<Factor> factors;

  const Scenario* find_scenario(std::string_view key) const {
    for (const auto& s : scenarios)
      if (s.key == key) return &s;
    return nullptr;
  }

  const Factor* find_factor(std::string_view key) const {
    for (const auto& f : factors)
      if (f.key == key) return &f;
    return nullptr;
  }

  std::optional<std::size_t> factor_index(std::string_view key) const {
    for (std::size_t i = 0; i < factors.size(); ++i)
      if (factors[i].key == key) return i;
    return std::nullopt;
  }

  // Throws InvalidConfig on any invariant violation.
  void validate() const;
};

namespace detail {

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++count;
  return count;
}

}  // namespace detail

inline void Design::validate() const {
  if (scenarios.empty()) throw InvalidConfig("design has no scenarios");
  std::map<std::string, int> seen;
  for (const auto& s : scenarios) {
    if (s.key.empty()) throw InvalidConfig("scenario with empty key");
    if (++seen[s.key] > 1) throw InvalidConfig("duplicate scenario key '" + s.key + "'");
    const auto n = detail::count_occurrences(s.template_text, kAdditionPlaceholder);
    if (n != 1)
      throw InvalidConfig("scenario '" + s.key + "' template must contain the ADDITION placeholder exactly once (found " +
                          std::to_string(n) + ")");
  }
  seen.clear();
  for (const auto& f : factors) {
    if (f.key.empty()) throw InvalidConfig("factor with empty key");
    if (++seen[f.key] > 1) throw InvalidConfig("duplicate factor key '" + f.key + "'");
    if (f.high_text.empty() || f.low_text.empty())
      throw InvalidConfig("factor '" + f.key + "' has an empty level text");
    if (f.high_text == f.low_text)
      throw InvalidConfig("factor '" + f.key + "' has identical High and Low texts");
  }
}

// Checks that `assignment` covers the design factors exactly (no missing, no
// extra keys).  Throws InvalidAssignment.
inline void require_complete(const Design& design, const FactorAssignment& assignment) {
  for (const auto& f : design.factors)
    if (!assignment.count(f.key))
      throw InvalidAssignment("assignment missing factor '" + f.key + "'");
  if (assignment.size() != design.factors.size())
    for (const auto& [key, level] : assignment) {
      (void)level;
      if (!design.find_factor(key)) throw InvalidAssignment("assignment has unknown factor '" + key + "'");
    }
}

// "<scenario>-b<bitstring>", bit i = 1 iff factor i (design order) is High.
inline std::string vignette_id(const Design& design, std::string_view scenario_key,
                               const FactorAssignment& assignment) {
  require_complete(design, assignment);
  std::string id(scenario_key);
  id += "-b";
  for (const auto& f : design.factors)
    id += assignment.at(f.key) == Level::High ? '1' : '0';
  return id;
}

// Scenario-major, then binary counting over the factors (factor 0 = most
// significant bit), so ids within a scenario ascend lexicographically.
inline std::vector<Vignette> enumerate_vignettes(const Design& design) {
  design.validate();
  const std::size_t k = design.factors.size();
  const std::size_t per_scenario = std::size_t{1} << k;
  std::vector<Vignette> out;
  out.reserve(design.scenarios.size() * per_scenario);
  for (const auto& scenario : design.scenarios) {
    for (std::size_t j = 0; j < per_scenario; ++j) {
      Vignette v;
      v.scenario_key = scenario.key;
      for (std::size_t i = 0; i < k; ++i) {
        const bool high = (j >> (k - 1 - i)) & 1u;
        v.assignment[design.factors[i].key] = high ? Level::High : Level::Low;
      }
      v.id = vignette_id(design, scenario.key, v.assignment);
      out.push_back(std::move(v));
    }
  }
  return out;
}

// ---- balance ----------------------------------------------------------------

struct LevelBalance {
  std::string factor_key;
  std::size_t high = 0;
  std::size_t low = 0;
};

struct PairBalance {
  std::string factor_a;
  std::string factor_b;
  std::size_t high_high = 0;
  std::size_t high_low = 0;
  std::size_t low_high = 0;
  std::size_t low_low = 0;
};

struct BalanceReport {
  std::size_t total = 0;
  std::vector<LevelBalance> levels;
  std::vector<PairBalance> pairs;
  std::vector<std::string> deviations;

  bool balanced() const { return deviations.empty(); }
};

// Counts per-level and pairwise joint cells over `vignettes` and flags every
// deviation from the full-factorial expectation (levels N/2, pair cells N/4).
inline BalanceReport balance_report(const Design& design, const std::vector<Vignette>& vignettes) {
  BalanceReport report;
  report.total = vignettes.size();
  const auto& factors = design.factors;

  for (const auto& f : factors) {
    LevelBalance lb;
    lb.factor_key = f.key;
    for (const auto& v : vignettes) {
      auto it = v.assignment.find(f.key);
      if (it == v.assignment.end()) continue;
      (it->second == Level::High ? lb.high : lb.low)++;
    }
    report.levels.push_back(lb);
  }
  for (std::size_t a = 0; a < factors.size(); ++a) {
    for (std::size_t b = a + 1; b < factors.size(); ++b) {
      PairBalance pb;
      pb.factor_a = factors[a].key;
      pb.factor_b = factors[b].key;
      for (const auto& v : vignettes) {
        auto ia = v.assignment.find(pb.factor_a);
        auto ib = v.assignment.find(pb.factor_b);
        if (ia == v.assignment.end() || ib == v.assignment.end()) continue;
        const bool ha = ia->second == Level::High;
        const bool hb = ib->second == Level::High;
        if (ha && hb)
          pb.high_high++;
        else if (ha)
          pb.high_low++;
        else if (hb)
          pb.low_high++;
        else
          pb.low_low++;
      }
      report.pairs.push_back(pb);
    }
  }

  const std::size_t n = report.total;
  for (const auto& lb : report.levels) {
    if (n % 2 != 0 || lb.high != n / 2 || lb.low != n / 2)
      report.deviations.push_back("factor '" + lb.factor_key + "' levels " + std::to_string(lb.high) + "/" +
                                  std::to_string(lb.low) + " (expected " + std::to_string(n / 2) + " each)");
  }
  for (const auto& pb : report.pairs) {
    const bool even = n % 4 == 0;
    const std::size_t expect = n / 4;
    if (!even || pb.high_high != expect || pb.high_low != expect || pb.low_high != expect ||
        pb.low_low != expect)
      report.deviations.push_back("pair (" + pb.factor_a + ", " + pb.factor_b + ") cells " +
                                  std::to_string(pb.high_high) + "/" + std::to_string(pb.high_low) + "/" +
                                  std::to_string(pb.low_high) + "/" + std::to_string(pb.low_low) +
                                  " (expected " + std::to_string(expect) + " each)");
  }
  return report;
}

// ---- JSON codec ---------------------------------------------------------------

inline nlohmann::json assignment_to_json(const FactorAssignment& assignment) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, level] : assignment) j[key] = to_string(level);
  return j;
}

inline FactorAssignment assignment_from_json(const nlohmann::json& j) {
  FactorAssignment out;
  for (auto it = j.begin(); it != j.end(); ++it)
    out[it.key()] = level_from_string(it.value().get<std::string>());
  return out;
}

inline nlohmann::json design_to_json(const Design& design) {
  nlohmann::json j;
  j["name"] = design.name;
  j["markup"] = to_string(design.markup);
  j["scenarios"] = nlohmann::json::array();
  for (const auto& s : design.scenarios)
    j["scenarios"].push_back({{"key", s.key}, {"label", s.label}, {"template", s.template_text}});
  j["factors"] = nlohmann::json::array();
  for (const auto& f : design.factors)
    j["factors"].push_back({{"key", f.key},
                            {"display_name", f.display_name},
                            {"table_label", f.table_label},
                            {"high_text", f.high_text},
                            {"low_text", f.low_text}});
  return j;
}

inline Design design_from_json(const nlohmann::json& j) {
  Design d;
  try {
    d.name = j.value("name", "");
    d.markup = markup_from_string(j.value("markup", "plain"));
    for (const auto& js : j.at("scenarios")) {
      Scenario s;
      s.key = js.at("key").get<std::string>();
      s.label = js.value("label", s.key);
      s.template_text = js.at("template").get<std::string>();
      d.scenarios.push_back(std::move(s));
    }
    for (const auto& jf : j.at("factors")) {
      Factor f;
      f.key = jf.at("key").get<std::string>();
      f.display_name = jf.at("display_name").get<std::string>();
      f.table_label = jf.value("table_label", f.key);
      f.high_text = jf.at("high_text").get<std::string>();
      f.low_text = jf.at("low_text").get<std::string>();
      d.factors.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed design file: ") + e.what());
  }
  d.validate();
  return d;
}

inline Design load_design(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open design file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("design file " + path.string() + " is not valid JSON: " + e.what());
  }
  return design_from_json(j);
}

}  // namespace conjoint
