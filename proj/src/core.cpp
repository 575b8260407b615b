#include "mcki/core.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace mcki {

using json = nlohmann::json;

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string require_string(const json& obj, const char* key, std::size_t line,
                           const std::string& case_id) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw CaseFileError(line, "case '" + case_id + "': missing field '" + key + "'");
  }
  if (!it->is_string()) {
    throw CaseFileError(line, "case '" + case_id + "': field '" + key + "' must be a string");
  }
  return it->get<std::string>();
}

RawCase parse_record(const json& rec, std::size_t line) {
  if (!rec.is_object()) throw CaseFileError(line, "record is not an object");
  RawCase c;
  c.case_id = require_string(rec, "case_id", line, "?");
  if (blank(c.case_id)) throw CaseFileError(line, "empty case_id");
  c.scenario_id = require_string(rec, "scenario_id", line, c.case_id);
  if (blank(c.scenario_id)) {
    throw CaseFileError(line, "case '" + c.case_id + "': empty scenario_id");
  }
  const auto topic = require_string(rec, "topic_group", line, c.case_id);
  auto group = parse_topic_group(topic);
  if (!group) {
    throw CaseFileError(line, "case '" + c.case_id + "': unknown topic_group '" + topic + "'");
  }
  c.topic_group = *group;
  c.image_ref = require_string(rec, "image_ref", line, c.case_id);
  if (blank(c.image_ref)) throw CaseFileError(line, "case '" + c.case_id + "': empty image_ref");
  c.generality_ref = require_string(rec, "generality_ref", line, c.case_id);
  c.cross_scenario_ref = require_string(rec, "cross_scenario_ref", line, c.case_id);

  auto qa = rec.find("qa");
  if (qa == rec.end() || !qa->is_object()) {
    throw CaseFileError(line, "case '" + c.case_id + "': missing object field 'qa'");
  }
  for (auto it = qa->begin(); it != qa->end(); ++it) {
    if (!parse_partition(it.key())) {
      throw CaseFileError(line, "case '" + c.case_id + "': unknown qa partition '" + it.key() + "'");
    }
  }
  for (Partition p : kAllPartitions) {
    const std::string code(to_string(p));
    auto entry = qa->find(code);
    if (entry == qa->end()) {
      throw CaseFileError(line, "case '" + c.case_id + "': qa missing partition '" + code + "'");
    }
    if (!entry->is_object()) {
      throw CaseFileError(line, "case '" + c.case_id + "': qa." + code + " is not an object");
    }
    QaPair pair{require_string(*entry, "question", line, c.case_id),
                require_string(*entry, "answer", line, c.case_id)};
    if (blank(pair.question) || blank(pair.answer)) {
      throw CaseFileError(line, "case '" + c.case_id + "': qa." + code +
                                    " has an empty question or answer");
    }
    c.qa.emplace(p, std::move(pair));
  }
  return c;
}

}  // namespace

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::en: return "en";
    case Partition::zh: return "zh";
    case Partition::ar: return "ar";
  }
  return "?";
}

std::optional<Partition> parse_partition(std::string_view code) {
  if (code == "en") return Partition::en;
  if (code == "zh") return Partition::zh;
  if (code == "ar") return Partition::ar;
  return std::nullopt;
}

std::string_view to_string(TopicGroup g) {
  switch (g) {
    case TopicGroup::social: return "social";
    case TopicGroup::religious: return "religious";
    case TopicGroup::ethical: return "ethical";
  }
  return "?";
}

std::optional<TopicGroup> parse_topic_group(std::string_view name) {
  if (name == "social") return TopicGroup::social;
  if (name == "religious") return TopicGroup::religious;
  if (name == "ethical") return TopicGroup::ethical;
  return std::nullopt;
}

InsertionSample RawCase::sample(Partition p) const {
  const auto& pair = qa.at(p);
  return InsertionSample{image_ref, p, pair.question, pair.answer};
}

Probe RawCase::probe(Partition p) const { return Probe{image_ref, qa.at(p).question, p}; }

CaseSet::CaseSet(std::vector<RawCase> cases) : cases_(std::move(cases)) {
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    if (!index_.emplace(cases_[i].case_id, i).second) {
      throw CaseFileError(i + 1, "duplicate case_id '" + cases_[i].case_id + "'");
    }
  }
  for (const auto& c : cases_) {
    const RawCase* gen = find(c.generality_ref);
    if (!gen) {
      throw CaseFileError(0, "case '" + c.case_id + "': dangling generality_ref '" +
                                 c.generality_ref + "'");
    }
    if (gen->scenario_id != c.scenario_id) {
      throw CaseFileError(0, "case '" + c.case_id + "': generality reference crosses scenario");
    }
    if (gen->image_ref == c.image_ref) {
      throw CaseFileError(0, "case '" + c.case_id + "': generality reference shares image_ref");
    }
    const RawCase* scen = find(c.cross_scenario_ref);
    if (!scen) {
      throw CaseFileError(0, "case '" + c.case_id + "': dangling cross_scenario_ref '" +
                                 c.cross_scenario_ref + "'");
    }
    if (scen->scenario_id == c.scenario_id) {
      throw CaseFileError(0, "case '" + c.case_id +
                                 "': cross-scenario reference stays in the same scenario");
    }
  }
}

const RawCase* CaseSet::find(std::string_view case_id) const {
  auto it = index_.find(std::string(case_id));
  return it == index_.end() ? nullptr : &cases_[it->second];
}

const RawCase& CaseSet::at(std::string_view case_id) const {
  if (const RawCase* c = find(case_id)) return *c;
  throw std::out_of_range("unknown case_id '" + std::string(case_id) + "'");
}

std::vector<std::string> CaseSet::scenario_ids() const {
  std::vector<std::string> out;
  std::set<std::string_view> seen;
  for (const auto& c : cases_) {
    if (seen.insert(c.scenario_id).second) out.push_back(c.scenario_id);
  }
  return out;
}

CaseSet parse_cases(std::istream& in) {
  std::vector<RawCase> cases;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      throw CaseFileError(line, std::string("parse error: ") + e.what());
    }
    cases.push_back(parse_record(rec, line));
    if (!ids.insert(cases.back().case_id).second) {
      throw CaseFileError(line, "duplicate case_id '" + cases.back().case_id + "'");
    }
  }
  return CaseSet(std::move(cases));
}

CaseSet load_cases(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseFileError(0, "cannot open case file '" + path.string() + "'");
  return parse_cases(in);
}

void write_cases(std::ostream& out, const CaseSet& cases) {
  for (const auto& c : cases) {
    json qa = json::object();
    for (const auto& [p, pair] : c.qa) {
      qa[std::string(to_string(p))] = {{"question", pair.question}, {"answer", pair.answer}};
    }
    json rec = {{"case_id", c.case_id},
                {"scenario_id", c.scenario_id},
                {"topic_group", std::string(to_string(c.topic_group))},
                {"image_ref", c.image_ref},
                {"qa", qa},
                {"generality_ref", c.generality_ref},
                {"cross_scenario_ref", c.cross_scenario_ref}};
    out << rec.dump() << '\n';
  }
}

bool is_permutation(const PartitionOrder& order) {
  return std::is_permutation(order.begin(), order.end(), kAllPartitions.begin());
}

PartitionOrder parse_order(std::string_view text) {
  PartitionOrder order{};
  std::size_t n = 0;
  std::string token;
  std::istringstream in{std::string(text)};
  while (std::getline(in, token, ',')) {
    auto p = parse_partition(token);
    if (!p) throw std::invalid_argument("unknown partition '" + token + "' in order");
    if (n == 3) throw std::invalid_argument("order must list exactly three partitions");
    order[n++] = *p;
  }
  if (n != 3) throw std::invalid_argument("order must list exactly three partitions");
  if (!is_permutation(order)) {
    throw std::invalid_argument("order '" + std::string(text) + "' is not a permutation of en,zh,ar");
  }
  return order;
}

std::string format_order(const PartitionOrder& order) {
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) out += ',';
    out += to_string(order[i]);
  }
  return out;
}

std::vector<SingleInsertCase> derive_single_cases(const CaseSet& cases) {
  std::vector<SingleInsertCase> out;
  out.reserve(2 * cases.size());
  for (const auto& c : cases) {
    const RawCase& gen = cases.at(c.generality_ref);
    const RawCase& scen = cases.at(c.cross_scenario_ref);
    for (Partition target : {Partition::zh, Partition::ar}) {
      SingleInsertCase s;
      s.case_id = c.case_id;
      s.scenario_id = c.scenario_id;
      s.topic_group = c.topic_group;
      s.target = c.sample(target);
      s.generality_item = gen.sample(target);
      std::size_t k = 0;
      for (Partition other : kAllPartitions) {
        if (other != target) s.cross_language_items[k++] = c.probe(other);
      }
      s.cross_scenario_item = scen.probe(target);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SequentialChain> derive_sequential_chains(const CaseSet& cases,
                                                      const PartitionOrder& order) {
  if (!is_permutation(order)) {
    throw std::invalid_argument("chain order must be a permutation of en,zh,ar");
  }
  std::vector<SequentialChain> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    const RawCase& gen = cases.at(c.generality_ref);
    const RawCase& scen = cases.at(c.cross_scenario_ref);
    SequentialChain chain;
    chain.chain_id = c.case_id;
    chain.scenario_id = c.scenario_id;
    chain.topic_group = c.topic_group;
    chain.image_ref = c.image_ref;
    chain.order = order;
    for (std::size_t t = 0; t < 3; ++t) {
      const Partition p = order[t];
      chain.steps[t] = ChainStep{c.sample(p), gen.sample(p), scen.probe(p)};
    }
    out.push_back(std::move(chain));
  }
  return out;
}

}  // namespace mcki
