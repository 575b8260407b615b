#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcki/methods.hpp"
#include "mcki/scoring.hpp"

namespace mcki {

/// Equal-weight mean of reliability, generality and both locality dimensions.
double overall_single(double reliability, double generality, double cross_language,
                      double cross_scenario);
/// Equal-weight mean of the three final dimensions.
double overall_sequential(double reliability, double generality, double locality);

struct HarnessOptions {
  std::vector<ScoreKind> kinds{ScoreKind::rouge_l};
  int workers = 1;
  /// Keep memory across cases and chains instead of resetting (single worker only).
  bool accumulate_memory = false;
};

struct SkipTally {
  std::size_t dropped_cases = 0;  // reliability item failed
  std::size_t failed_items = 0;   // any item that could not be generated or scored

  bool operator==(const SkipTally&) const = default;
};

/// Activation bookkeeping over evaluated items. Targets and generality items
/// should activate on the inserted entry; locality items should abstain.
struct RoutingStats {
  std::size_t target_total = 0;
  std::size_t target_correct = 0;
  std::size_t generality_total = 0;
  std::size_t generality_correct = 0;
  std::size_t locality_total = 0;
  std::size_t locality_correct = 0;

  std::size_t total() const { return target_total + generality_total + locality_total; }
  std::size_t correct() const { return target_correct + generality_correct + locality_correct; }
  double accuracy() const { return total() ? static_cast<double>(correct()) / total() : 0.0; }
  RoutingStats& operator+=(const RoutingStats& o);
};

// ---------------------------------------------------------------------------
// Single-insert
// ---------------------------------------------------------------------------

enum SingleDim : std::size_t { kReliability, kGenerality, kCrossLanguage, kCrossScenario };
inline constexpr std::array<const char*, 4> kSingleDimNames{
    "reliability", "generality", "cross_language_locality", "cross_scenario_locality"};

struct CaseScores {
  std::string case_id;
  TopicGroup topic_group = TopicGroup::social;
  Partition partition = Partition::en;
  bool target_routed = false;  // target activated its own entry
  std::map<ScoreKind, std::array<std::optional<double>, 4>> values;
  std::map<ScoreKind, bool> dropped;
  std::size_t failed_items = 0;
};

struct SingleAggregate {
  std::array<double, 4> dims{};
  double overall = 0.0;
  std::size_t cases_scored = 0;
  /// Reliability over cases whose target activated its own entry.
  std::optional<double> reliability_routed;
  std::map<TopicGroup, double> reliability_by_topic;
  std::map<Partition, double> reliability_by_partition;
  SkipTally skipped;
};

struct SingleReport {
  std::string method;
  std::map<ScoreKind, SingleAggregate> by_kind;
  std::vector<CaseScores> per_case;
  RoutingStats routing;
};

SingleReport eval_single(std::span<const SingleInsertCase> cases, InsertionMethod& method,
                         const Scorer& scorer, const HarnessOptions& options = {});

// ---------------------------------------------------------------------------
// Sequential-insert
// ---------------------------------------------------------------------------

enum SequentialDim : std::size_t { kFinalReliability, kFinalGenerality, kFinalLocality };
inline constexpr std::array<const char*, 3> kSequentialDimNames{
    "final_reliability", "final_generality", "final_locality"};

/// retention[s][m]: reliability of step s measured after step m (m >= s).
using RetentionGrid = std::array<std::array<std::optional<double>, 3>, 3>;

struct ChainScores {
  std::string chain_id;
  std::map<ScoreKind, std::array<std::array<std::optional<double>, 3>, 3>> finals;  // [dim][step]
  std::map<ScoreKind, RetentionGrid> retention;
  std::map<ScoreKind, bool> dropped;
  std::size_t failed_items = 0;
};

struct SequentialAggregate {
  std::array<double, 3> dims{};
  double overall = 0.0;
  std::size_t chains_scored = 0;
  RetentionGrid retention;
  SkipTally skipped;
};

struct SequentialReport {
  std::string method;
  PartitionOrder order = kDefaultOrder;
  bool retention_measured = false;
  std::map<ScoreKind, SequentialAggregate> by_kind;
  std::vector<ChainScores> per_chain;
  RoutingStats routing;
};

SequentialReport eval_sequential(std::span<const SequentialChain> chains, InsertionMethod& method,
                                 const Scorer& scorer, bool measure_retention,
                                 const HarnessOptions& options = {});

// ---------------------------------------------------------------------------
// Efficiency
// ---------------------------------------------------------------------------

struct EfficiencyOptions {
  std::size_t n_train = 100;
  std::size_t n_eval = 100;
  /// Router training units; timed only for methods with a router.
  std::span<const TrainingBatch> train_batches;
  RouterHyper hyper;
};

struct EfficiencyReport {
  std::string method;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  double train_per_case_ms = 0.0;
  double insert_per_case_ms = 0.0;
  double request_per_sample_ms = 0.0;
  std::optional<std::uint64_t> peak_memory_bytes;
  std::optional<std::uint64_t> parameter_count;
  std::optional<std::uint64_t> router_parameter_count;
  std::vector<double> train_samples_ms;
  std::vector<double> insert_samples_ms;
  std::vector<double> request_samples_ms;
};

/// Wall-clock means. n_eval = 0 throws std::invalid_argument("empty sample").
EfficiencyReport measure_efficiency(InsertionMethod& method,
                                    std::span<const SingleInsertCase> cases,
                                    const EfficiencyOptions& options);

}  // namespace mcki
