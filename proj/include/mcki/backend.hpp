#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mcki/core.hpp"

namespace mcki {

using Vec = Eigen::VectorXd;

struct PooledFeatures {
  Vec q_pooled;  // mean over question-token hidden states
  Vec v_pooled;  // mean over visual-token hidden states

  Eigen::Index d_model() const noexcept { return q_pooled.size(); }
  /// Throws std::invalid_argument on length mismatch or non-finite entries.
  void validate() const;
};

struct GenRequest {
  std::optional<std::string> wrapped_context;
  std::string image_ref;
  std::string question;
  std::string system_prompt;
  Partition partition = Partition::en;
};

inline constexpr int kMaxNewTokens = 64;

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The frozen-model boundary. Implementations must tolerate concurrent calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Eigen::Index d_model() const = 0;
  virtual std::string model_name() const = 0;
  virtual PooledFeatures embed(const Probe& probe, std::string_view system_prompt) = 0;
  virtual std::string generate(const GenRequest& req) = 0;

  virtual std::optional<std::uint64_t> parameter_count() const { return std::nullopt; }
  virtual std::optional<std::uint64_t> peak_memory_bytes() const { return std::nullopt; }
};

/// Per-language system prompts handed to the backend with every request.
struct SystemPrompts {
  std::map<Partition, std::string> by_partition;

  std::string_view for_partition(Partition p) const {
    auto it = by_partition.find(p);
    return it == by_partition.end() ? std::string_view{} : std::string_view{it->second};
  }
};

// ---------------------------------------------------------------------------
// Keyed deterministic noise
// ---------------------------------------------------------------------------

/// FNV-1a over the parts (with separators) finished by a splitmix64 mix.
std::uint64_t hash_key(std::uint64_t seed, std::initializer_list<std::string_view> parts);

/// Counter-based normal stream: splitmix64 over a key, Box-Muller on top.
class KeyedNormalStream {
 public:
  explicit KeyedNormalStream(std::uint64_t key) : state_(key) {}
  std::uint64_t next_u64();
  double next_uniform();  // (0, 1)
  double next_normal();

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

struct SyntheticWorldConfig {
  std::uint64_t seed = 0;
  Eigen::Index d_model = 64;
  double noise_scale = 0.05;  // per-coordinate standard deviation
  double separation = 0.8;    // centroid cosines stay <= 1 - separation
  double partition_offset_scale = 1.0;
  int max_centroid_attempts = 100000;
};

/// Scenario centroids are drawn in the order given, each by rejection against
/// the ones before it, so extending the scenario list never moves existing
/// centroids.
class SyntheticWorld {
 public:
  SyntheticWorld(SyntheticWorldConfig config, const std::vector<std::string>& scenario_ids);

  const SyntheticWorldConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& scenario_ids() const noexcept { return scenario_order_; }
  const Vec& centroid(const std::string& scenario_id) const;
  const Vec& offset(Partition p) const { return offsets_.at(p); }
  Vec noise(std::initializer_list<std::string_view> key_parts) const;

 private:
  SyntheticWorldConfig config_;
  std::vector<std::string> scenario_order_;
  std::unordered_map<std::string, Vec> centroids_;
  std::map<Partition, Vec> offsets_;
};

/// Pure synthetic backend. embed() follows the world construction; generate()
/// is an oracle: it returns the registered reference answer when the wrapped
/// context contains that exact question and answer, otherwise a canned base
/// answer fixed per (image_ref, question, partition).
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(std::shared_ptr<const SyntheticWorld> world,
                   const std::vector<const CaseSet*>& registries);

  Eigen::Index d_model() const override { return world_->config().d_model; }
  std::string model_name() const override { return "synthetic-oracle"; }
  PooledFeatures embed(const Probe& probe, std::string_view system_prompt) override;
  std::string generate(const GenRequest& req) override;

  std::string canned_base_answer(const Probe& probe) const;
  const SyntheticWorld& world() const noexcept { return *world_; }

 private:
  struct Key {
    std::string image_ref;
    std::string question;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };

  std::shared_ptr<const SyntheticWorld> world_;
  std::unordered_map<std::string, std::string> scenario_of_image_;
  std::unordered_map<Key, std::string, KeyHash> answers_;
};

/// Builds a synthetic world whose scenario list is the first-appearance union
/// of the given case sets, prefixed by `known_scenarios`.
std::shared_ptr<const SyntheticWorld> make_world(SyntheticWorldConfig config,
                                                 const std::vector<std::string>& known_scenarios,
                                                 const std::vector<const CaseSet*>& case_sets);

// ---------------------------------------------------------------------------
// Synthetic fixtures
// ---------------------------------------------------------------------------

struct FixtureSpec {
  int scenarios = 20;
  int cases_per_scenario = 10;
  std::string split = "train";  // prefixes case ids and image refs
};

/// Deterministic raw cases in the case-file schema. Generality references
/// point at the next image of the same scenario, cross-scenario references at
/// the same slot of the next scenario. Requires >= 2 scenarios and >= 2 cases.
CaseSet make_fixture_cases(const FixtureSpec& spec);

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

struct RemoteBackendConfig {
  std::string url;  // e.g. http://127.0.0.1:8000
  std::chrono::milliseconds timeout{120000};
  int max_retries = 2;
  std::chrono::milliseconds backoff{250};
  int max_in_flight = 1;
};

/// HTTP client for the sidecar protocol (/meta, /embed, /generate).
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteBackendConfig config);
  ~RemoteBackend() override;

  Eigen::Index d_model() const override { return d_model_; }
  std::string model_name() const override { return model_name_; }
  PooledFeatures embed(const Probe& probe, std::string_view system_prompt) override;
  std::string generate(const GenRequest& req) override;
  std::optional<std::uint64_t> parameter_count() const override { return parameter_count_; }
  std::optional<std::uint64_t> peak_memory_bytes() const override;

 private:
  std::string post(const std::string& path, const std::string& body) const;
  std::string get(const std::string& path) const;

  struct Impl;
  RemoteBackendConfig config_;
  std::unique_ptr<Impl> impl_;
  Eigen::Index d_model_ = 0;
  std::string model_name_;
  std::optional<std::uint64_t> parameter_count_;
};

}  // namespace mcki
