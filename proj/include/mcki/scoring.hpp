#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcki/core.hpp"

namespace mcki {

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

/// Script-aware tokenizer. Han, Hiragana and Katakana characters become
/// single-character tokens; other runs of letters, digits and combining marks
/// form word tokens. Everything else separates. Output is lowercased.
std::vector<std::string> tokenize(std::string_view text);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeComponents {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

RougeComponents rouge_l_components(std::span<const std::string> candidate,
                                   std::span<const std::string> reference);

/// ROUGE-L F1 on a 0-100 scale over already tokenized sequences.
double rouge_l_tokens(std::span<const std::string> candidate,
                      std::span<const std::string> reference);

/// ROUGE-L F1 on a 0-100 scale; 0 when either side tokenizes to nothing.
double rouge_l(std::string_view candidate, std::string_view reference);

// ---------------------------------------------------------------------------
// LLM-as-Judge
// ---------------------------------------------------------------------------

struct JudgeRequest {
  Partition language = Partition::en;
  std::string question;
  std::string reference_answer;
  std::string candidate_answer;
};

struct JudgeVerdict {
  int score = 0;
  std::string reason;
  int retries = 0;
};

/// Raised when a judge reply cannot be turned into a valid 0-10 verdict.
class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Default judge prompt. Placeholders: {language} {question}
/// {reference_answer} {candidate_answer}.
extern const std::string_view kDefaultJudgePrompt;
inline constexpr std::string_view kJudgePromptVersion = "judge-prompt-v1";

std::string_view language_name(Partition p);
std::string render_judge_prompt(std::string_view tmpl, const JudgeRequest& req);

/// Accepts either a bare {"score", "reason"} object or a chat-completion
/// envelope whose first choice carries that object as message content.
JudgeVerdict parse_judge_reply(std::string_view body);

class Judge {
 public:
  virtual ~Judge() = default;
  /// Returns a verdict with score in [0, 10] or throws JudgeError.
  virtual JudgeVerdict evaluate(const JudgeRequest& req) = 0;
  virtual std::string name() const = 0;
};

/// Deterministic in-process judge: 10 on exact match, otherwise the ROUGE-L
/// score rounded onto the 0-10 scale.
class StubJudge final : public Judge {
 public:
  JudgeVerdict evaluate(const JudgeRequest& req) override;
  std::string name() const override { return "stub"; }
};

struct HttpJudgeConfig {
  std::string url;  // base URL; requests go to <url>/chat/completions
  std::string api_key;
  std::string model = "gpt-5.4-mini";
  std::string prompt_template = std::string(kDefaultJudgePrompt);
  std::string reasoning_effort = "none";
  int max_output_tokens = 256;
  int max_retries = 3;
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff{200};
  int max_in_flight = 4;

  /// Reads JUDGE_URL (required) and JUDGE_API_KEY (optional); throws
  /// std::invalid_argument naming JUDGE_URL when it is unset.
  static HttpJudgeConfig from_environment();
};

class HttpJudge final : public Judge {
 public:
  explicit HttpJudge(HttpJudgeConfig config);
  ~HttpJudge() override;
  JudgeVerdict evaluate(const JudgeRequest& req) override;
  std::string name() const override { return "http:" + config_.model; }
  const HttpJudgeConfig& config() const noexcept { return config_; }

 private:
  struct Impl;
  HttpJudgeConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// Short-circuits empty candidates to 0 and enforces the 0-10 range.
JudgeVerdict judge_score(const JudgeRequest& req, Judge& judge);

// ---------------------------------------------------------------------------
// Score dispatch
// ---------------------------------------------------------------------------

enum class ScoreKind { rouge_l, judge };

std::string_view to_string(ScoreKind k);
std::optional<ScoreKind> parse_score_kind(std::string_view name);

inline constexpr double max_score(ScoreKind k) { return k == ScoreKind::rouge_l ? 100.0 : 10.0; }

struct ScoreValue {
  ScoreKind kind = ScoreKind::rouge_l;
  double value = 0.0;
};

/// Context forwarded to the judge; the ROUGE-L path ignores it.
struct ScoreContext {
  Partition language = Partition::en;
  std::string_view question;
};

class Scorer {
 public:
  Scorer() = default;
  explicit Scorer(std::shared_ptr<Judge> judge) : judge_(std::move(judge)) {}

  bool has_judge() const noexcept { return judge_ != nullptr; }
  Judge* judge() const noexcept { return judge_.get(); }

  /// Throws JudgeError for judge failures, std::logic_error if no judge is set.
  ScoreValue score(ScoreKind kind, std::string_view candidate, std::string_view reference,
                   const ScoreContext& ctx) const;

 private:
  std::shared_ptr<Judge> judge_;
};

}  // namespace mcki
