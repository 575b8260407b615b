#include "mcki/report.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace mcki {

namespace {

std::string fixed(double x) { return fmt::format("{:.6f}", x); }
std::string fixed(const std::optional<double>& x) { return x ? fixed(*x) : std::string(); }

std::string kinds_list(const auto& by_kind) {
  std::string out;
  for (const auto& [k, _] : by_kind) out += (out.empty() ? "" : ",") + std::string(to_string(k));
  return out;
}

void add_config(KeyValues& out, const KeyValues& config) {
  for (const auto& [k, v] : config) out.emplace_back("config." + k, v);
}

void add_routing(KeyValues& out, const RoutingStats& r) {
  out.emplace_back("routing.target_total", std::to_string(r.target_total));
  out.emplace_back("routing.target_correct", std::to_string(r.target_correct));
  out.emplace_back("routing.generality_total", std::to_string(r.generality_total));
  out.emplace_back("routing.generality_correct", std::to_string(r.generality_correct));
  out.emplace_back("routing.locality_total", std::to_string(r.locality_total));
  out.emplace_back("routing.locality_correct", std::to_string(r.locality_correct));
  out.emplace_back("routing.accuracy", fixed(r.accuracy()));
}

void add_skipped(KeyValues& out, const std::string& prefix, const SkipTally& s) {
  out.emplace_back(prefix + "skipped.dropped_cases", std::to_string(s.dropped_cases));
  out.emplace_back(prefix + "skipped.failed_items", std::to_string(s.failed_items));
}

std::string join_samples(const std::vector<double>& xs) {
  std::string out;
  for (double x : xs) out += (out.empty() ? "" : ",") + fmt::format("{:.4f}", x);
  return out;
}

}  // namespace

KeyValues report_values(const SingleReport& report, const KeyValues& config) {
  KeyValues out;
  out.emplace_back("report.type", "single");
  out.emplace_back("report.method", report.method);
  out.emplace_back("report.score_kinds", kinds_list(report.by_kind));
  out.emplace_back("report.cases", std::to_string(report.per_case.size()));
  for (const auto& [kind, agg] : report.by_kind) {
    const std::string p = std::string(to_string(kind)) + ".";
    for (std::size_t d = 0; d < 4; ++d) out.emplace_back(p + kSingleDimNames[d], fixed(agg.dims[d]));
    out.emplace_back(p + "overall", fixed(agg.overall));
    out.emplace_back(p + "cases_scored", std::to_string(agg.cases_scored));
    out.emplace_back(p + "reliability_routed", fixed(agg.reliability_routed));
    for (const auto& [g, v] : agg.reliability_by_topic) {
      out.emplace_back(p + "reliability_by_topic." + std::string(to_string(g)), fixed(v));
    }
    for (const auto& [part, v] : agg.reliability_by_partition) {
      out.emplace_back(p + "reliability_by_partition." + std::string(to_string(part)), fixed(v));
    }
    add_skipped(out, p, agg.skipped);
  }
  add_routing(out, report.routing);
  for (std::size_t i = 0; i < report.per_case.size(); ++i) {
    const auto& c = report.per_case[i];
    const std::string p = fmt::format("case.{}.", i);
    out.emplace_back(p + "id", c.case_id);
    out.emplace_back(p + "topic_group", std::string(to_string(c.topic_group)));
    out.emplace_back(p + "partition", std::string(to_string(c.partition)));
    out.emplace_back(p + "target_routed", c.target_routed ? "true" : "false");
    for (const auto& [kind, v] : c.values) {
      const std::string kp = p + std::string(to_string(kind)) + ".";
      for (std::size_t d = 0; d < 4; ++d) out.emplace_back(kp + kSingleDimNames[d], fixed(v[d]));
      out.emplace_back(kp + "dropped", c.dropped.at(kind) ? "true" : "false");
    }
  }
  add_config(out, config);
  return out;
}

KeyValues report_values(const SequentialReport& report, const KeyValues& config) {
  KeyValues out;
  out.emplace_back("report.type", "sequential");
  out.emplace_back("report.method", report.method);
  out.emplace_back("report.score_kinds", kinds_list(report.by_kind));
  out.emplace_back("report.chains", std::to_string(report.per_chain.size()));
  out.emplace_back("report.order", format_order(report.order));
  out.emplace_back("report.retention", report.retention_measured ? "true" : "false");
  for (const auto& [kind, agg] : report.by_kind) {
    const std::string p = std::string(to_string(kind)) + ".";
    for (std::size_t d = 0; d < 3; ++d) {
      out.emplace_back(p + kSequentialDimNames[d], fixed(agg.dims[d]));
    }
    out.emplace_back(p + "overall", fixed(agg.overall));
    out.emplace_back(p + "chains_scored", std::to_string(agg.chains_scored));
    if (report.retention_measured) {
      for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t m = s; m < 3; ++m) {
          out.emplace_back(fmt::format("{}retention.{}.{}", p, s + 1, m + 1),
                           fixed(agg.retention[s][m]));
        }
      }
    }
    add_skipped(out, p, agg.skipped);
  }
  add_routing(out, report.routing);
  for (std::size_t i = 0; i < report.per_chain.size(); ++i) {
    const auto& c = report.per_chain[i];
    const std::string p = fmt::format("chain.{}.", i);
    out.emplace_back(p + "id", c.chain_id);
    for (const auto& [kind, f] : c.finals) {
      const std::string kp = p + std::string(to_string(kind)) + ".";
      for (std::size_t d = 0; d < 3; ++d) {
        for (std::size_t t = 0; t < 3; ++t) {
          out.emplace_back(fmt::format("{}{}.{}", kp, kSequentialDimNames[d], t + 1), fixed(f[d][t]));
        }
      }
      out.emplace_back(kp + "dropped", c.dropped.at(kind) ? "true" : "false");
    }
  }
  add_config(out, config);
  return out;
}

KeyValues report_values(const EfficiencyReport& report, const KeyValues& config) {
  auto opt = [](const std::optional<std::uint64_t>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  KeyValues out;
  out.emplace_back("report.type", "efficiency");
  out.emplace_back("report.method", report.method);
  out.emplace_back("efficiency.n_train", std::to_string(report.n_train));
  out.emplace_back("efficiency.n_eval", std::to_string(report.n_eval));
  out.emplace_back("efficiency.train_per_case_ms", fixed(report.train_per_case_ms));
  out.emplace_back("efficiency.insert_per_case_ms", fixed(report.insert_per_case_ms));
  out.emplace_back("efficiency.request_per_sample_ms", fixed(report.request_per_sample_ms));
  out.emplace_back("efficiency.peak_memory_bytes", opt(report.peak_memory_bytes));
  out.emplace_back("efficiency.parameter_count", opt(report.parameter_count));
  out.emplace_back("efficiency.router_parameter_count", opt(report.router_parameter_count));
  out.emplace_back("efficiency.samples.train_ms", join_samples(report.train_samples_ms));
  out.emplace_back("efficiency.samples.insert_ms", join_samples(report.insert_samples_ms));
  out.emplace_back("efficiency.samples.request_ms", join_samples(report.request_samples_ms));
  add_config(out, config);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Lookup {
 public:
  explicit Lookup(const KeyValues& kv) {
    for (const auto& [k, v] : kv) map_[k] = v;
  }
  std::string get(const std::string& key) const {
    auto it = map_.find(key);
    return it == map_.end() ? std::string() : it->second;
  }
  bool has(const std::string& key) const { return map_.count(key) != 0; }

 private:
  std::map<std::string, std::string> map_;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::string kind_label(const std::string& kind) { return kind == "judge" ? "Judge" : "ROUGE-L"; }

std::string two_dp(const std::string& v) {
  if (v.empty()) return "-";
  return fmt::format("{:.2f}", std::stod(v));
}

std::string render_single(const Lookup& kv) {
  std::string out;
  const auto method = kv.get("report.method");
  out += fmt::format("Single-insert evaluation ({} cases)\n\n", kv.get("report.cases"));
  out += fmt::format("{:<10} {:<8} {:>12} {:>12} {:>15} {:>15} {:>9}\n", "Method", "Score",
                     "Reliability", "Generality", "Cross-Language", "Cross-Scenario", "Overall");
  for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
    const auto p = kind + ".";
    out += fmt::format("{:<10} {:<8} {:>12} {:>12} {:>15} {:>15} {:>9}\n", method,
                       kind_label(kind), two_dp(kv.get(p + "reliability")),
                       two_dp(kv.get(p + "generality")),
                       two_dp(kv.get(p + "cross_language_locality")),
                       two_dp(kv.get(p + "cross_scenario_locality")), two_dp(kv.get(p + "overall")));
  }
  out += "\nReliability by topic group and inserted partition\n\n";
  out += fmt::format("{:<8} {:>9} {:>10} {:>9} {:>8} {:>8} {:>8}\n", "Score", "social",
                     "religious", "ethical", "en", "zh", "ar");
  for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
    const auto t = kind + ".reliability_by_topic.";
    const auto q = kind + ".reliability_by_partition.";
    out += fmt::format("{:<8} {:>9} {:>10} {:>9} {:>8} {:>8} {:>8}\n", kind_label(kind),
                       two_dp(kv.get(t + "social")), two_dp(kv.get(t + "religious")),
                       two_dp(kv.get(t + "ethical")), two_dp(kv.get(q + "en")),
                       two_dp(kv.get(q + "zh")), two_dp(kv.get(q + "ar")));
  }
  out += "\nSkipped\n\n";
  for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
    out += fmt::format("{:<8} dropped cases {}, failed items {}\n", kind_label(kind),
                       kv.get(kind + ".skipped.dropped_cases"),
                       kv.get(kind + ".skipped.failed_items"));
  }
  out += fmt::format("\nRouting accuracy {} ({} / {} decisions)\n",
                     two_dp(std::to_string(100.0 * std::stod(kv.get("routing.accuracy")))),
                     std::stoull(kv.get("routing.target_correct")) +
                         std::stoull(kv.get("routing.generality_correct")) +
                         std::stoull(kv.get("routing.locality_correct")),
                     std::stoull(kv.get("routing.target_total")) +
                         std::stoull(kv.get("routing.generality_total")) +
                         std::stoull(kv.get("routing.locality_total")));
  return out;
}

std::string render_sequential(const Lookup& kv) {
  std::string out;
  const auto method = kv.get("report.method");
  const auto order = split_commas(kv.get("report.order"));
  out += fmt::format("Sequential-insert evaluation ({} chains, order {})\n\n",
                     kv.get("report.chains"), kv.get("report.order"));
  out += fmt::format("{:<10} {:<8} {:>18} {:>17} {:>15} {:>9}\n", "Method", "Score",
                     "Final Reliability", "Final Generality", "Final Locality", "Overall");
  for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
    const auto p = kind + ".";
    out += fmt::format("{:<10} {:<8} {:>18} {:>17} {:>15} {:>9}\n", method, kind_label(kind),
                       two_dp(kv.get(p + "final_reliability")),
                       two_dp(kv.get(p + "final_generality")),
                       two_dp(kv.get(p + "final_locality")), two_dp(kv.get(p + "overall")));
  }
  if (kv.get("report.retention") == "true" && order.size() == 3) {
    for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
      out += fmt::format("\nRetention ({}): reliability of each inserted step after later steps\n\n",
                         kind_label(kind));
      out += fmt::format("{:<12}", "inserted");
      for (std::size_t m = 0; m < 3; ++m) {
        out += fmt::format(" {:>10}", fmt::format("after {}", order[m]));
      }
      out += "\n";
      for (std::size_t s = 0; s < 3; ++s) {
        out += fmt::format("{:<12}", fmt::format("{} ({})", s + 1, order[s]));
        for (std::size_t m = 0; m < 3; ++m) {
          const auto key = fmt::format("{}.retention.{}.{}", kind, s + 1, m + 1);
          out += fmt::format(" {:>10}", m < s ? "" : two_dp(kv.get(key)));
        }
        out += "\n";
      }
    }
  }
  out += "\nSkipped\n\n";
  for (const auto& kind : split_commas(kv.get("report.score_kinds"))) {
    out += fmt::format("{:<8} dropped chains {}, failed items {}\n", kind_label(kind),
                       kv.get(kind + ".skipped.dropped_cases"),
                       kv.get(kind + ".skipped.failed_items"));
  }
  return out;
}

std::string render_efficiency(const Lookup& kv) {
  auto or_dash = [](const std::string& v) { return v.empty() ? std::string("-") : v; };
  std::string out;
  out += fmt::format("Efficiency ({} training cases, {} evaluation cases)\n\n",
                     kv.get("efficiency.n_train"), kv.get("efficiency.n_eval"));
  out += fmt::format("{:<10} {:>16} {:>17} {:>21} {:>14} {:>18}\n", "Method", "Train / case ms",
                     "Insert / case ms", "Request / sample ms", "Router params",
                     "Peak memory bytes");
  out += fmt::format("{:<10} {:>16} {:>17} {:>21} {:>14} {:>18}\n", kv.get("report.method"),
                     fmt::format("{:.3f}", std::stod(kv.get("efficiency.train_per_case_ms"))),
                     fmt::format("{:.3f}", std::stod(kv.get("efficiency.insert_per_case_ms"))),
                     fmt::format("{:.3f}", std::stod(kv.get("efficiency.request_per_sample_ms"))),
                     or_dash(kv.get("efficiency.router_parameter_count")),
                     or_dash(kv.get("efficiency.peak_memory_bytes")));
  return out;
}

}  // namespace

std::string render_table(const KeyValues& values) {
  const Lookup kv(values);
  const auto type = kv.get("report.type");
  if (type == "single") return render_single(kv);
  if (type == "sequential") return render_sequential(kv);
  if (type == "efficiency") return render_efficiency(kv);
  throw std::invalid_argument("unknown report type '" + type + "'");
}

std::string retention_rows(const SequentialReport& report) {
  if (!report.retention_measured) return {};
  std::string out =
      "inserted_step\tinserted_partition\tmeasured_after_step\tmeasured_after_partition\t"
      "score_kind\tvalue\n";
  for (const auto& [kind, agg] : report.by_kind) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t m = s; m < 3; ++m) {
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", s + 1, to_string(report.order[s]), m + 1,
                           to_string(report.order[m]), to_string(kind),
                           fixed(agg.retention[s][m]));
      }
    }
  }
  return out;
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + escape_value(v) + "\n";
  return out;
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.empty()) continue;
    const auto sep = line.find(" = ");
    if (sep == std::string_view::npos) {
      throw std::runtime_error(fmt::format("report line {}: expected 'key = value'", lineno));
    }
    out.emplace_back(std::string(line.substr(0, sep)), unescape_value(line.substr(sep + 3)));
  }
  return out;
}

KeyValues read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

EmittedFiles emit_report(const KeyValues& values, const std::string& retention,
                         const std::filesystem::path& dir, const std::string& run_id) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());

  auto write = [](const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << body;
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
  };

  EmittedFiles files;
  files.report = dir / (run_id + ".report");
  files.table = dir / (run_id + ".txt");
  write(files.report, format_key_values(values));
  write(files.table, render_table(values));
  if (!retention.empty()) {
    files.retention = dir / (run_id + ".retention");
    write(files.retention, retention);
  }
  return files;
}

}  // namespace mcki
