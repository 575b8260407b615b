#pragma once

#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mcki/backend.hpp"
#include "mcki/methods.hpp"
#include "mcki/pipeline.hpp"
#include "mcki/router.hpp"

namespace mcki::test {

inline nlohmann::json case_record(const std::string& id, const std::string& scenario,
                                  const std::string& image, const std::string& gen,
                                  const std::string& scen) {
  nlohmann::json qa;
  for (const char* p : {"en", "zh", "ar"}) {
    qa[p] = {{"question", id + " question " + p}, {"answer", id + " answer " + p}};
  }
  return {{"case_id", id},          {"scenario_id", scenario}, {"topic_group", "social"},
          {"image_ref", image},     {"qa", qa},                {"generality_ref", gen},
          {"cross_scenario_ref", scen}};
}

/// Three valid records: a and b share scenario s1, c is in s2.
inline std::vector<nlohmann::json> three_records() {
  return {case_record("a", "s1", "img/a", "b", "c"), case_record("b", "s1", "img/b", "a", "c"),
          case_record("c", "s2", "img/c", "c2", "a"), case_record("c2", "s2", "img/c2", "c", "b")};
}

inline std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

inline PooledFeatures random_features(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  PooledFeatures f;
  f.q_pooled = Vec::NullaryExpr(d, [&] { return n(rng); });
  f.v_pooled = Vec::NullaryExpr(d, [&] { return n(rng); });
  return f;
}

/// Backend with explicitly assigned features. generate() echoes its inputs so
/// tests can see exactly what reached the model.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(Eigen::Index d) : d_(d) {}

  void set(const Probe& p, PooledFeatures f) {
    std::lock_guard lock(mu_);
    feats_[key(p)] = std::move(f);
  }

  Eigen::Index d_model() const override { return d_; }
  std::string model_name() const override { return "scripted"; }

  PooledFeatures embed(const Probe& p, std::string_view) override {
    ++embeds;
    std::lock_guard lock(mu_);
    auto it = feats_.find(key(p));
    if (it == feats_.end()) throw BackendError("no features for " + key(p));
    return it->second;
  }

  std::string generate(const GenRequest& req) override {
    ++generations;
    if (fail_generate) throw BackendError("scripted failure");
    return "[" + req.wrapped_context.value_or("") + "|" + req.question + "|" + req.system_prompt +
           "]";
  }

  std::atomic<int> embeds{0};
  std::atomic<int> generations{0};
  std::atomic<bool> fail_generate{false};

 private:
  static std::string key(const Probe& p) {
    return p.image_ref + "\x1f" + p.question + "\x1f" + std::string(to_string(p.partition));
  }
  Eigen::Index d_;
  std::mutex mu_;
  std::map<std::string, PooledFeatures> feats_;
};

/// Synthetic world over fixture train and test splits with an oracle backend.
struct SyntheticSetup {
  CaseSet train, test;
  std::shared_ptr<const SyntheticWorld> world;
  std::shared_ptr<SyntheticBackend> backend;
  SystemPrompts prompts;

  SyntheticSetup(int scenarios, int per_scenario, SyntheticWorldConfig cfg = {})
      : train(make_fixture_cases({scenarios, per_scenario, "train"})),
        test(make_fixture_cases({scenarios, per_scenario, "test"})) {
    world = make_world(cfg, {}, {&train, &test});
    backend = std::make_shared<SyntheticBackend>(world, std::vector<const CaseSet*>{&train, &test});
    prompts.by_partition = {{Partition::en, "Answer briefly."},
                            {Partition::zh, "请简要回答。"},
                            {Partition::ar, "أجب باختصار."}};
  }

  MethodContext context() const {
    MethodContext ctx;
    ctx.backend = backend;
    ctx.prompts = prompts;
    return ctx;
  }
};

}  // namespace mcki::test
