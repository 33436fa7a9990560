#pragma once

// Renders a vignette into the exact prompt text sent to a respondent.
// Rendering is a pure function of (vignette, design): same inputs, same bytes.

#include <string>
#include <vector>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"

namespace conjoint {

struct PromptBundle {
  std::string system_text;
  std::string user_text;
};

// The survey instruction, byte-exact (the dash before "no punctuation" is an
// em dash).
inline std::string render_system() {
  return "You are answering an academic survey. Respond with exactly one integer between 0 and "
         "100\xE2\x80\x94no punctuation, no explanation.";
}

// One block per factor in design order: the heading, then the level line the
// assignment selects.  Plain markup emits "heading\n• line"; html markup
// mirrors the <p>/<ul> wrappers of the source table.
inline std::string render_addition(const FactorAssignment& assignment, const std::vector<Factor>& factors,
                                   AdditionMarkup markup = AdditionMarkup::Plain) {
  for (const auto& f : factors)
    if (!assignment.count(f.key)) throw InvalidAssignment("assignment missing factor '" + f.key + "'");

  std::string out;
  bool first = true;
  for (const auto& f : factors) {
    const std::string& line = assignment.at(f.key) == Level::High ? f.high_text : f.low_text;
    if (markup == AdditionMarkup::Plain) {
      if (!first) out += '\n';
      out += f.display_name;
      out += "\n\xE2\x80\xA2 ";
      out += line;
    } else {
      if (!first) out += ' ';
      out += "<p>";
      out += f.display_name;
      out += "</p> <ul style=\"list-style-type: none\"> \xE2\x80\xA2 ";
      out += line;
    }
    first = false;
  }
  return out;
}

inline PromptBundle render_vignette(const Vignette& vignette, const Design& design) {
  const Scenario* scenario = design.find_scenario(vignette.scenario_key);
  if (!scenario) throw UnknownScenario("unknown scenario key '" + vignette.scenario_key + "'");

  const std::string addition = render_addition(vignette.assignment, design.factors, design.markup);
  std::string user = scenario->template_text;
  const auto pos = user.find(kAdditionPlaceholder);
  if (pos == std::string::npos)
    throw InvalidConfig("scenario '" + scenario->key + "' template lacks the ADDITION placeholder");
  user.replace(pos, kAdditionPlaceholder.size(), addition);

  return PromptBundle{render_system(), std::move(user)};
}

}  // namespace conjoint
