#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcki/backend.hpp"
#include "mcki/router.hpp"

namespace mcki {

struct TrainedRouter {
  RouterCheckpoint checkpoint;
  TrainResult training;
  Calibration calibration;
};

/// Builds batches from `cases`, trains the router, and calibrates tau on the
/// final training scores.
TrainedRouter train_and_calibrate(const CaseSet& cases, Backend& backend,
                                  const SystemPrompts& prompts, const RouterHyper& hyper);

/// Synthetic world description stored alongside a checkpoint so evaluation
/// rebuilds the same centroids.
nlohmann::json world_to_json(const SyntheticWorld& world);
SyntheticWorldConfig world_config_from_json(const nlohmann::json& j,
                                            std::vector<std::string>& scenarios);

struct ScoreSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};
ScoreSummary summarize(const std::vector<double>& xs);

}  // namespace mcki
