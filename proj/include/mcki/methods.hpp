#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mcki/backend.hpp"
#include "mcki/router.hpp"

namespace mcki {

struct MemoryEntry {
  Vec key;  // unit route vector, or zero (never matched)
  InsertionSample sample;
  std::size_t entry_index = 0;
};

struct RouteDecision {
  enum class Outcome { abstain, activate };
  Outcome outcome = Outcome::abstain;
  std::optional<std::size_t> entry_index;
  std::optional<double> similarity;

  bool activated() const noexcept { return outcome == Outcome::activate; }
};

/// Write-once map of base-model answers keyed by (image_ref, question,
/// partition). Safe to share between workers.
class BaseAnswerCache {
 public:
  std::optional<std::string> find(const Probe& probe) const;
  /// Stores `answer` unless an entry already exists; returns the stored value.
  std::string insert(const Probe& probe, std::string answer);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::string, std::string, Partition>;
  mutable std::mutex mu_;
  std::map<Key, std::string> answers_;
};

struct MethodAnswer {
  std::string text;
  RouteDecision decision;
};

/// Shared plumbing every method needs: the frozen model, its per-language
/// system prompts, and the base-answer cache.
struct MethodContext {
  std::shared_ptr<Backend> backend;
  SystemPrompts prompts;
  std::shared_ptr<BaseAnswerCache> cache = std::make_shared<BaseAnswerCache>();
};

/// One method state. A state is used by one worker at a time; clone() gives
/// an empty-memory copy sharing the backend, cache and frozen router.
class InsertionMethod {
 public:
  explicit InsertionMethod(MethodContext ctx) : ctx_(std::move(ctx)) {}
  virtual ~InsertionMethod() = default;

  virtual std::string name() const = 0;
  virtual void insert(const InsertionSample& sample) = 0;
  virtual MethodAnswer answer(const Probe& request) = 0;
  /// Empties memory and demonstrations; the base cache is kept.
  virtual void reset() = 0;
  virtual std::unique_ptr<InsertionMethod> clone() const = 0;
  virtual std::size_t memory_size() const = 0;

  /// Frozen router, for methods that have one.
  virtual const RouterParams* router() const { return nullptr; }

  /// Base model output for `request`, generated once and cached.
  std::string base_answer(const Probe& request);

  const MethodContext& context() const noexcept { return ctx_; }
  Backend& backend() const { return *ctx_.backend; }

 protected:
  std::string generate_with(const Probe& request, std::optional<std::string> wrapped_context);
  MethodContext ctx_;
};

inline constexpr std::string_view kDefaultWrapTemplate = "Reference — Q: {question} A: {answer}\n\n";

/// Substitutes {question} and {answer}; other text is copied verbatim.
std::string render_wrap(std::string_view tmpl, const InsertionSample& sample);

struct MckiOptions {
  std::string wrap_template = std::string(kDefaultWrapTemplate);
};

class MckiMethod final : public InsertionMethod {
 public:
  MckiMethod(MethodContext ctx, std::shared_ptr<const RouterParams> router, double tau,
             MckiOptions options = {});

  std::string name() const override { return "mcki"; }
  void insert(const InsertionSample& sample) override;
  MethodAnswer answer(const Probe& request) override;
  void reset() override { memory_.clear(); }
  std::unique_ptr<InsertionMethod> clone() const override;
  std::size_t memory_size() const override { return memory_.size(); }
  const RouterParams* router() const override { return router_.get(); }

  /// Highest-similarity entry (lowest index on ties); activate iff >= tau.
  RouteDecision lookup(const PooledFeatures& request) const;
  RouteDecision lookup_route(const Vec& route) const;

  const std::vector<MemoryEntry>& memory() const noexcept { return memory_; }
  double tau() const noexcept { return tau_; }
  const MckiOptions& options() const noexcept { return options_; }

 private:
  std::shared_ptr<const RouterParams> router_;
  double tau_;
  MckiOptions options_;
  std::vector<MemoryEntry> memory_;
};

class BaseMethod final : public InsertionMethod {
 public:
  using InsertionMethod::InsertionMethod;
  std::string name() const override { return "base"; }
  void insert(const InsertionSample&) override {}
  MethodAnswer answer(const Probe& request) override;
  void reset() override {}
  std::unique_ptr<InsertionMethod> clone() const override;
  std::size_t memory_size() const override { return 0; }
};

struct IkeLiteOptions {
  int max_demos = 3;
  std::string wrap_template = std::string(kDefaultWrapTemplate);
};

/// Prepends the most recent stored samples to every request, without any
/// retrieval. Decisions report activate with the newest demonstration's index
/// and no similarity, or abstain while no demonstrations are stored.
class IkeLiteMethod final : public InsertionMethod {
 public:
  IkeLiteMethod(MethodContext ctx, IkeLiteOptions options = {});
  std::string name() const override { return "ike-lite"; }
  void insert(const InsertionSample& sample) override { demos_.push_back(sample); }
  MethodAnswer answer(const Probe& request) override;
  void reset() override { demos_.clear(); }
  std::unique_ptr<InsertionMethod> clone() const override;
  std::size_t memory_size() const override { return demos_.size(); }

  std::string render_context() const;

 private:
  IkeLiteOptions options_;
  std::vector<InsertionSample> demos_;
};

}  // namespace mcki
