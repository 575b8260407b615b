#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcki/backend.hpp"
#include "mcki/methods.hpp"
#include "mcki/router.hpp"

namespace mcki {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct RunConfig {
  std::string run_id = "run";
  std::string mode = "single";  // single | sequential
  std::filesystem::path train_data;
  std::filesystem::path eval_data;
  std::filesystem::path output_dir = ".";
  std::filesystem::path checkpoint = "router.ckpt";
  std::string method = "mcki";        // mcki | base | ike-lite
  std::string backend = "synthetic";  // synthetic | remote
  std::string scorer = "rouge_l";     // rouge_l | judge | both
  int workers = 1;
  PartitionOrder order = kDefaultOrder;
  bool retention = false;
  bool accumulate_memory = false;

  RouterHyper hyper;
  std::optional<double> tau_override;
  MckiOptions mcki;
  IkeLiteOptions ike;
  SyntheticWorldConfig synthetic;

  std::string judge_model = "gpt-5.4-mini";
  int judge_max_retries = 3;
  int judge_timeout_ms = 30000;
  int judge_max_in_flight = 4;
  std::filesystem::path judge_prompt_file;

  int backend_timeout_ms = 120000;
  int backend_max_retries = 2;
  int backend_max_in_flight = 1;

  SystemPrompts prompts;

  std::size_t bench_n_train = 100;
  std::size_t bench_n_eval = 100;
};

struct ConfigKey {
  std::string_view name;
  std::string_view doc;
};

/// Every accepted key, in echo order.
const std::vector<ConfigKey>& config_keys();

/// Sets one key from its text form. Throws ConfigError on an unknown key or
/// an invalid value.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses `key = value` lines; blank lines and lines starting with '#' are
/// skipped. Values may use \n, \t and \\ escapes.
KeyValues parse_config(std::istream& in);
KeyValues load_config_file(const std::filesystem::path& path);

void apply_config(RunConfig& cfg, const KeyValues& values);

/// Fully resolved configuration, one entry per documented key.
KeyValues echo_config(const RunConfig& cfg);

std::string escape_value(std::string_view raw);
std::string unescape_value(std::string_view text);

}  // namespace mcki
