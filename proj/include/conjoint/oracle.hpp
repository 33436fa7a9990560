#pragma once

// The simulated respondent: a planted linear preference function plus
// Gaussian noise, used to verify that the pipeline recovers known ground
// truth.  Every draw is keyed by (seed, vignette id, run index), so a
// simulated run is reproducible regardless of execution order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/providers.hpp"
#include "conjoint/rng.hpp"

namespace conjoint {

struct LatentModel {
  double base = 50.0;  // intercept on the 0-100 scale
  std::map<std::string, double> weights;          // effect of High vs Low, per factor
  std::map<std::string, double> scenario_offsets; // absent scenario = 0
  double noise_sd = 0.0;
  std::uint64_t rng_seed = 0;
};

// Systematic part only; no clamping here.
inline double latent_score(const LatentModel& model, const Vignette& vignette) {
  double score = model.base;
  if (auto it = model.scenario_offsets.find(vignette.scenario_key); it != model.scenario_offsets.end())
    score += it->second;
  for (const auto& [factor, level] : vignette.assignment) {
    auto it = model.weights.find(factor);
    if (it == model.weights.end())
      throw ModelMismatch("oracle has no weight for factor '" + factor + "'");
    if (level == Level::High) score += it->second;
  }
  return score;
}

// clamp(round(latent + eps), 0, 100) rendered in decimal; pure in
// (model, vignette, run_index).
inline RawResponse mock_respond(const LatentModel& model, const Vignette& vignette, long run_index) {
  double value = latent_score(model, vignette);
  if (model.noise_sd > 0) value += model.noise_sd * counter_normal(model.rng_seed, vignette.id, run_index);
  const long rounded = std::lround(value);
  const long clamped = std::clamp(rounded, 0l, 100l);

  RawResponse out;
  out.text = std::to_string(clamped);
  out.provider = "oracle";
  out.transport_meta = "retries=0";
  return out;
}

class MockRespondent : public Respondent {
 public:
  explicit MockRespondent(LatentModel model) : model_(std::move(model)) {}

  RawResponse respond(const Vignette& vignette, const PromptBundle&, const QueryParams&,
                      long run_index) override {
    return mock_respond(model_, vignette, run_index);
  }

  const LatentModel& model() const { return model_; }

 private:
  LatentModel model_;
};

inline nlohmann::json latent_model_to_json(const LatentModel& m) {
  nlohmann::json j;
  j["base"] = m.base;
  j["weights"] = m.weights;
  j["scenario_offsets"] = m.scenario_offsets;
  j["noise_sd"] = m.noise_sd;
  j["rng_seed"] = m.rng_seed;
  return j;
}

inline LatentModel latent_model_from_json(const nlohmann::json& j) {
  LatentModel m;
  try {
    m.base = j.value("base", 50.0);
    if (j.contains("weights"))
      for (auto it = j["weights"].begin(); it != j["weights"].end(); ++it)
        m.weights[it.key()] = it.value().get<double>();
    if (j.contains("scenario_offsets"))
      for (auto it = j["scenario_offsets"].begin(); it != j["scenario_offsets"].end(); ++it)
        m.scenario_offsets[it.key()] = it.value().get<double>();
    m.noise_sd = j.value("noise_sd", 0.0);
    if (m.noise_sd < 0) throw InvalidConfig("oracle noise_sd must be >= 0");
    m.rng_seed = j.value("rng_seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed oracle section: ") + e.what());
  }
  return m;
}

}  // namespace conjoint
