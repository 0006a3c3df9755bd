#pragma once

#include "latent_match/estimator.hpp"
#include "latent_match/inference.hpp"
#include "latent_match/simulation.hpp"

#include <json.hpp>

namespace latent {

nlohmann::json to_json(const EstimateResult& r);
EstimateResult estimate_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TestResult& t);
nlohmann::json to_json(const McSummary& s);
nlohmann::json to_json(const DgpSpec& spec);
nlohmann::json to_json(const FirstStageConfig& c);

/// Applies the keys present in `j` on top of `spec`.
void apply_overrides(DgpSpec& spec, const nlohmann::json& j);

}  // namespace latent
