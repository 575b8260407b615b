#include "mcki/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>

#include <fmt/format.h>

namespace mcki {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError(fmt::format("invalid value '{}' for {}: expected {}", value, key, want));
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(key, v, "a number");
  return out;
}

int parse_int(std::string_view key, std::string_view v, int min) {
  const int x = parse_number<int>(key, v);
  if (x < min) bad_value(key, v, fmt::format("an integer >= {}", min));
  return x;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string one_of(std::string_view key, std::string_view v,
                   std::initializer_list<std::string_view> allowed) {
  for (auto a : allowed) {
    if (v == a) return std::string(v);
  }
  std::string list;
  for (auto a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
  bad_value(key, v, list);
}

std::string num(double x) { return fmt::format("{}", x); }

struct KeyHandler {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyHandler>& handlers() {
  using C = RunConfig;
  using V = std::string_view;
  static const std::vector<KeyHandler> table = {
      {{"run_id", "Report file stem"},
       [](C& c, V v) {
         if (v.empty() || v.find('/') != V::npos) bad_value("run_id", v, "a plain file stem");
         c.run_id = v;
       },
       [](const C& c) { return c.run_id; }},
      {{"mode", "Evaluation setting: single | sequential"},
       [](C& c, V v) { c.mode = one_of("mode", v, {"single", "sequential"}); },
       [](const C& c) { return c.mode; }},
      {{"data.train", "Training case file (JSONL)"},
       [](C& c, V v) { c.train_data = std::string(v); },
       [](const C& c) { return c.train_data.string(); }},
      {{"data.eval", "Evaluation case file (JSONL)"},
       [](C& c, V v) { c.eval_data = std::string(v); },
       [](const C& c) { return c.eval_data.string(); }},
      {{"output.dir", "Directory for reports"},
       [](C& c, V v) { c.output_dir = std::string(v); },
       [](const C& c) { return c.output_dir.string(); }},
      {{"router.checkpoint", "Router checkpoint path"},
       [](C& c, V v) { c.checkpoint = std::string(v); },
       [](const C& c) { return c.checkpoint.string(); }},
      {{"method", "mcki | base | ike-lite"},
       [](C& c, V v) { c.method = one_of("method", v, {"mcki", "base", "ike-lite"}); },
       [](const C& c) { return c.method; }},
      {{"backend", "synthetic | remote (remote reads BACKEND_URL)"},
       [](C& c, V v) { c.backend = one_of("backend", v, {"synthetic", "remote"}); },
       [](const C& c) { return c.backend; }},
      {{"scorer", "rouge_l | judge | both (judge reads JUDGE_URL)"},
       [](C& c, V v) { c.scorer = one_of("scorer", v, {"rouge_l", "judge", "both"}); },
       [](const C& c) { return c.scorer; }},
      {{"seed", "Router initialization and shuffle seed"},
       [](C& c, V v) { c.hyper.seed = parse_number<std::uint64_t>("seed", v); },
       [](const C& c) { return std::to_string(c.hyper.seed); }},
      {{"workers", "Evaluation worker count"},
       [](C& c, V v) { c.workers = parse_int("workers", v, 1); },
       [](const C& c) { return std::to_string(c.workers); }},
      {{"order", "Sequential chain partition order, e.g. en,zh,ar"},
       [](C& c, V v) {
         try {
           c.order = parse_order(v);
         } catch (const std::invalid_argument&) {
           bad_value("order", v, "a permutation of en,zh,ar");
         }
       },
       [](const C& c) { return format_order(c.order); }},
      {{"retention", "Measure the sequential retention grid"},
       [](C& c, V v) { c.retention = parse_bool("retention", v); },
       [](const C& c) { return std::string(c.retention ? "true" : "false"); }},
      {{"accumulate_memory", "Keep memory across cases and chains"},
       [](C& c, V v) { c.accumulate_memory = parse_bool("accumulate_memory", v); },
       [](const C& c) { return std::string(c.accumulate_memory ? "true" : "false"); }},
      {{"router.d_route", "Route vector dimension"},
       [](C& c, V v) { c.hyper.d_route = parse_int("router.d_route", v, 1); },
       [](const C& c) { return std::to_string(c.hyper.d_route); }},
      {{"router.gamma", "Similarity scale"},
       [](C& c, V v) { c.hyper.gamma = parse_number<double>("router.gamma", v); },
       [](const C& c) { return num(c.hyper.gamma); }},
      {{"router.lambda_neg", "Weight of the log-sum-exp term"},
       [](C& c, V v) { c.hyper.lambda_neg = parse_number<double>("router.lambda_neg", v); },
       [](const C& c) { return num(c.hyper.lambda_neg); }},
      {{"router.w_cross_language", "Cross-language negative weight"},
       [](C& c, V v) {
         c.hyper.w_cross_language = parse_number<double>("router.w_cross_language", v);
       },
       [](const C& c) { return num(c.hyper.w_cross_language); }},
      {{"router.w_cross_scenario", "Cross-scenario negative weight"},
       [](C& c, V v) {
         c.hyper.w_cross_scenario = parse_number<double>("router.w_cross_scenario", v);
       },
       [](const C& c) { return num(c.hyper.w_cross_scenario); }},
      {{"router.learning_rate", "Adam learning rate"},
       [](C& c, V v) { c.hyper.learning_rate = parse_number<double>("router.learning_rate", v); },
       [](const C& c) { return num(c.hyper.learning_rate); }},
      {{"router.epochs", "Training epochs"},
       [](C& c, V v) { c.hyper.epochs = parse_int("router.epochs", v, 0); },
       [](const C& c) { return std::to_string(c.hyper.epochs); }},
      {{"router.tau_override", "Use this threshold instead of the calibrated one"},
       [](C& c, V v) {
         if (v.empty()) {
           c.tau_override.reset();
         } else {
           c.tau_override = parse_number<double>("router.tau_override", v);
         }
       },
       [](const C& c) { return c.tau_override ? num(*c.tau_override) : std::string(); }},
      {{"mcki.wrap_template", "Context template with {question} and {answer}"},
       [](C& c, V v) { c.mcki.wrap_template = v; },
       [](const C& c) { return c.mcki.wrap_template; }},
      {{"ike.max_demos", "Demonstrations prepended by ike-lite"},
       [](C& c, V v) { c.ike.max_demos = parse_int("ike.max_demos", v, 1); },
       [](const C& c) { return std::to_string(c.ike.max_demos); }},
      {{"synthetic.seed", "Synthetic world seed"},
       [](C& c, V v) { c.synthetic.seed = parse_number<std::uint64_t>("synthetic.seed", v); },
       [](const C& c) { return std::to_string(c.synthetic.seed); }},
      {{"synthetic.d_model", "Synthetic feature dimension"},
       [](C& c, V v) { c.synthetic.d_model = parse_int("synthetic.d_model", v, 1); },
       [](const C& c) { return std::to_string(c.synthetic.d_model); }},
      {{"synthetic.noise_scale", "Per-coordinate noise standard deviation"},
       [](C& c, V v) {
         c.synthetic.noise_scale = parse_number<double>("synthetic.noise_scale", v);
       },
       [](const C& c) { return num(c.synthetic.noise_scale); }},
      {{"synthetic.separation", "Scenario centroid cosine margin"},
       [](C& c, V v) { c.synthetic.separation = parse_number<double>("synthetic.separation", v); },
       [](const C& c) { return num(c.synthetic.separation); }},
      {{"synthetic.partition_offset_scale", "Length of per-partition question offsets"},
       [](C& c, V v) {
         c.synthetic.partition_offset_scale =
             parse_number<double>("synthetic.partition_offset_scale", v);
       },
       [](const C& c) { return num(c.synthetic.partition_offset_scale); }},
      {{"judge.model", "Judge model name"},
       [](C& c, V v) { c.judge_model = v; },
       [](const C& c) { return c.judge_model; }},
      {{"judge.max_retries", "Judge retries per item"},
       [](C& c, V v) { c.judge_max_retries = parse_int("judge.max_retries", v, 0); },
       [](const C& c) { return std::to_string(c.judge_max_retries); }},
      {{"judge.timeout_ms", "Judge request timeout"},
       [](C& c, V v) { c.judge_timeout_ms = parse_int("judge.timeout_ms", v, 1); },
       [](const C& c) { return std::to_string(c.judge_timeout_ms); }},
      {{"judge.max_in_flight", "Concurrent judge requests"},
       [](C& c, V v) { c.judge_max_in_flight = parse_int("judge.max_in_flight", v, 1); },
       [](const C& c) { return std::to_string(c.judge_max_in_flight); }},
      {{"judge.prompt_file", "Judge prompt template file (default: built-in)"},
       [](C& c, V v) { c.judge_prompt_file = std::string(v); },
       [](const C& c) { return c.judge_prompt_file.string(); }},
      {{"backend.timeout_ms", "Remote backend request timeout"},
       [](C& c, V v) { c.backend_timeout_ms = parse_int("backend.timeout_ms", v, 1); },
       [](const C& c) { return std::to_string(c.backend_timeout_ms); }},
      {{"backend.max_retries", "Remote backend retries per request"},
       [](C& c, V v) { c.backend_max_retries = parse_int("backend.max_retries", v, 0); },
       [](const C& c) { return std::to_string(c.backend_max_retries); }},
      {{"backend.max_in_flight", "Concurrent remote backend requests"},
       [](C& c, V v) { c.backend_max_in_flight = parse_int("backend.max_in_flight", v, 1); },
       [](const C& c) { return std::to_string(c.backend_max_in_flight); }},
      {{"prompt.en", "System prompt for en requests"},
       [](C& c, V v) { c.prompts.by_partition[Partition::en] = v; },
       [](const C& c) { return std::string(c.prompts.for_partition(Partition::en)); }},
      {{"prompt.zh", "System prompt for zh requests"},
       [](C& c, V v) { c.prompts.by_partition[Partition::zh] = v; },
       [](const C& c) { return std::string(c.prompts.for_partition(Partition::zh)); }},
      {{"prompt.ar", "System prompt for ar requests"},
       [](C& c, V v) { c.prompts.by_partition[Partition::ar] = v; },
       [](const C& c) { return std::string(c.prompts.for_partition(Partition::ar)); }},
      {{"bench.n_train", "Training cases timed by bench"},
       [](C& c, V v) { c.bench_n_train = parse_number<std::size_t>("bench.n_train", v); },
       [](const C& c) { return std::to_string(c.bench_n_train); }},
      {{"bench.n_eval", "Evaluation cases timed by bench"},
       [](C& c, V v) { c.bench_n_eval = parse_number<std::size_t>("bench.n_eval", v); },
       [](const C& c) { return std::to_string(c.bench_n_eval); }},
  };
  return table;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& h : handlers()) out.push_back(h.key);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& h : handlers()) {
    if (h.key.name == key) {
      h.set(cfg, value);
      return;
    }
  }
  throw ConfigError(fmt::format("unknown configuration key '{}'", key));
}

std::string escape_value(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_value(std::string_view text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\' || i + 1 == text.size()) {
      out += text[i];
      continue;
    }
    switch (text[++i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case '\\': out += '\\'; break;
      default:
        out += '\\';
        out += text[i];
    }
  }
  return out;
}

KeyValues parse_config(std::istream& in) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
    }
    const auto key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", lineno));
    const bool known = std::any_of(config_keys().begin(), config_keys().end(),
                                   [&](const ConfigKey& k) { return k.name == key; });
    if (!known) throw ConfigError(fmt::format("line {}: unknown configuration key '{}'", lineno, key));
    out.emplace_back(std::string(key), unescape_value(trim(t.substr(eq + 1))));
  }
  return out;
}

KeyValues load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(in);
}

void apply_config(RunConfig& cfg, const KeyValues& values) {
  for (const auto& [k, v] : values) set_config_value(cfg, k, v);
}

KeyValues echo_config(const RunConfig& cfg) {
  KeyValues out;
  for (const auto& h : handlers()) out.emplace_back(std::string(h.key.name), h.get(cfg));
  return out;
}

}  // namespace mcki
