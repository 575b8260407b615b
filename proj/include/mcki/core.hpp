#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mcki {

enum class Partition { en, zh, ar };

inline constexpr std::array<Partition, 3> kAllPartitions{Partition::en, Partition::zh,
                                                        Partition::ar};

std::string_view to_string(Partition p);
std::optional<Partition> parse_partition(std::string_view code);

enum class TopicGroup { social, religious, ethical };

std::string_view to_string(TopicGroup g);
std::optional<TopicGroup> parse_topic_group(std::string_view name);

/// Thrown for any malformed or inconsistent case file. `line()` is 1-based,
/// or 0 when the problem is a cross-record reference.
class CaseFileError : public std::runtime_error {
 public:
  CaseFileError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct InsertionSample {
  std::string image_ref;
  Partition partition = Partition::en;
  std::string question;
  std::string answer;

  bool operator==(const InsertionSample&) const = default;
};

/// An (image, question) pair with no reference answer attached.
struct Probe {
  std::string image_ref;
  std::string question;
  Partition partition = Partition::en;

  bool operator==(const Probe&) const = default;
};

struct QaPair {
  std::string question;
  std::string answer;

  bool operator==(const QaPair&) const = default;
};

struct RawCase {
  std::string case_id;
  std::string scenario_id;
  TopicGroup topic_group = TopicGroup::social;
  std::string image_ref;
  std::map<Partition, QaPair> qa;
  std::string generality_ref;
  std::string cross_scenario_ref;

  InsertionSample sample(Partition p) const;
  Probe probe(Partition p) const;
};

/// Validated, immutable collection of raw cases in file order.
class CaseSet {
 public:
  CaseSet() = default;
  /// Validates every invariant and cross reference; throws CaseFileError.
  explicit CaseSet(std::vector<RawCase> cases);

  std::size_t size() const noexcept { return cases_.size(); }
  bool empty() const noexcept { return cases_.empty(); }
  const std::vector<RawCase>& cases() const noexcept { return cases_; }
  auto begin() const noexcept { return cases_.begin(); }
  auto end() const noexcept { return cases_.end(); }

  const RawCase& at(std::string_view case_id) const;
  const RawCase* find(std::string_view case_id) const;

  /// Scenario ids in order of first appearance.
  std::vector<std::string> scenario_ids() const;

 private:
  std::vector<RawCase> cases_;
  std::unordered_map<std::string, std::size_t> index_;
};

CaseSet load_cases(const std::filesystem::path& path);
CaseSet parse_cases(std::istream& in);
void write_cases(std::ostream& out, const CaseSet& cases);

struct SingleInsertCase {
  std::string case_id;
  std::string scenario_id;
  TopicGroup topic_group = TopicGroup::social;
  InsertionSample target;
  InsertionSample generality_item;
  std::array<Probe, 2> cross_language_items;
  Probe cross_scenario_item;
};

struct ChainStep {
  InsertionSample sample;
  InsertionSample generality_item;
  Probe locality_item;

  bool operator==(const ChainStep&) const = default;
};

struct SequentialChain {
  std::string chain_id;
  std::string scenario_id;
  TopicGroup topic_group = TopicGroup::social;
  std::string image_ref;
  std::array<ChainStep, 3> steps;
  std::array<Partition, 3> order;
};

using PartitionOrder = std::array<Partition, 3>;

inline constexpr PartitionOrder kDefaultOrder{Partition::en, Partition::zh, Partition::ar};

/// Parses "en,zh,ar"-style permutations; throws std::invalid_argument.
PartitionOrder parse_order(std::string_view text);
std::string format_order(const PartitionOrder& order);
bool is_permutation(const PartitionOrder& order);

std::vector<SingleInsertCase> derive_single_cases(const CaseSet& cases);
std::vector<SequentialChain> derive_sequential_chains(const CaseSet& cases,
                                                      const PartitionOrder& order = kDefaultOrder);

}  // namespace mcki
