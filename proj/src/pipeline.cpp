#include "mcki/pipeline.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace mcki {

using json = nlohmann::json;

TrainedRouter train_and_calibrate(const CaseSet& cases, Backend& backend,
                                  const SystemPrompts& prompts, const RouterHyper& hyper) {
  hyper.validate();
  const auto batches = build_training_batches(cases, backend, prompts, hyper);
  spdlog::info("training router on {} batches (d_model {}, d_route {})", batches.size(),
               backend.d_model(), hyper.d_route);
  TrainedRouter out;
  out.training = train_router(batches, backend.d_model(), hyper);
  out.calibration = calibrate_threshold(out.training.scores);
  out.checkpoint.params = out.training.params;
  out.checkpoint.hyper = hyper;
  out.checkpoint.tau = out.calibration.tau;
  out.checkpoint.extras["calibration"] = {{"correct", out.calibration.correct},
                                          {"total", out.calibration.total},
                                          {"accuracy", out.calibration.accuracy()}};
  out.checkpoint.extras["loss"] = {{"initial_mean", out.training.initial_mean_loss},
                                   {"final_mean", out.training.final_mean_loss}};
  out.checkpoint.extras["backend"] = backend.model_name();
  return out;
}

json world_to_json(const SyntheticWorld& world) {
  const auto& c = world.config();
  return {{"seed", c.seed},
          {"d_model", c.d_model},
          {"noise_scale", c.noise_scale},
          {"separation", c.separation},
          {"partition_offset_scale", c.partition_offset_scale},
          {"max_centroid_attempts", c.max_centroid_attempts},
          {"scenarios", world.scenario_ids()}};
}

SyntheticWorldConfig world_config_from_json(const json& j, std::vector<std::string>& scenarios) {
  SyntheticWorldConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.d_model = j.at("d_model").get<Eigen::Index>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.separation = j.at("separation").get<double>();
  c.partition_offset_scale = j.at("partition_offset_scale").get<double>();
  c.max_centroid_attempts = j.value("max_centroid_attempts", c.max_centroid_attempts);
  scenarios = j.at("scenarios").get<std::vector<std::string>>();
  return c;
}

ScoreSummary summarize(const std::vector<double>& xs) {
  ScoreSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  s.min = *lo;
  s.max = *hi;
  double total = 0.0;
  for (double x : xs) total += x;
  s.mean = total / static_cast<double>(xs.size());
  return s;
}

}  // namespace mcki
