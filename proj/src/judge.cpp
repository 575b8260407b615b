#include <cmath>
#include <cstdlib>

#include "json.hpp"
#include "mcki/scoring.hpp"

namespace mcki {

using json = nlohmann::json;

const std::string_view kDefaultJudgePrompt =
    R"(You are grading a short answer to a culture-conditioned visual question.
The image is not shown to you. Judge only whether the candidate answer is
semantically consistent with the reference answer for the given question.

Language: {language}
Question: {question}
Reference answer: {reference_answer}
Candidate answer: {candidate_answer}

Score the candidate with an integer from 0 to 10:
10 means the candidate expresses the same judgment and key content as the reference.
5 means it is partially consistent or misses important content.
0 means it contradicts the reference or is unrelated.

Reply with a JSON object only, in the form {"score": <integer 0-10>, "reason": "<one short sentence>"}.
)";

std::string_view language_name(Partition p) {
  switch (p) {
    case Partition::en: return "English";
    case Partition::zh: return "Chinese";
    case Partition::ar: return "Arabic";
  }
  return "?";
}

std::string render_judge_prompt(std::string_view tmpl, const JudgeRequest& req) {
  struct Slot {
    std::string_view key;
    std::string_view value;
  };
  const Slot slots[] = {{"{language}", language_name(req.language)},
                        {"{question}", req.question},
                        {"{reference_answer}", req.reference_answer},
                        {"{candidate_answer}", req.candidate_answer}};
  std::string out;
  out.reserve(tmpl.size() + req.question.size() + req.reference_answer.size() +
              req.candidate_answer.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& slot : slots) {
        if (tmpl.substr(i, slot.key.size()) == slot.key) {
          out += slot.value;
          i += slot.key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

namespace {

std::string_view strip_code_fence(std::string_view s) {
  auto trim = [](std::string_view v) {
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
    return v;
  };
  s = trim(s);
  if (s.starts_with("```")) {
    auto nl = s.find('\n');
    s = nl == std::string_view::npos ? std::string_view{} : s.substr(nl + 1);
    if (auto end = s.rfind("```"); end != std::string_view::npos) s = s.substr(0, end);
  }
  return trim(s);
}

JudgeVerdict verdict_from_payload(const json& payload) {
  if (!payload.is_object()) throw JudgeError("judge reply is not an object");
  auto score = payload.find("score");
  if (score == payload.end() || !score->is_number_integer()) {
    throw JudgeError("judge reply lacks an integer 'score'");
  }
  auto reason = payload.find("reason");
  if (reason == payload.end() || !reason->is_string()) {
    throw JudgeError("judge reply lacks a string 'reason'");
  }
  const auto value = score->get<long long>();
  if (value < 0 || value > 10) {
    throw JudgeError("judge score " + std::to_string(value) + " outside 0-10");
  }
  return JudgeVerdict{static_cast<int>(value), reason->get<std::string>(), 0};
}

}  // namespace

JudgeVerdict parse_judge_reply(std::string_view body) {
  json root = json::parse(body, nullptr, false);
  if (root.is_discarded()) throw JudgeError("judge reply is not valid JSON");
  if (root.is_object() && root.contains("choices")) {
    const auto& choices = root["choices"];
    if (!choices.is_array() || choices.empty()) throw JudgeError("judge reply has no choices");
    const auto* content = &choices[0];
    if (!content->contains("message") || !(*content)["message"].contains("content") ||
        !(*content)["message"]["content"].is_string()) {
      throw JudgeError("judge reply choice has no message content");
    }
    const auto text = (*content)["message"]["content"].get<std::string>();
    json inner = json::parse(strip_code_fence(text), nullptr, false);
    if (inner.is_discarded()) throw JudgeError("judge message content is not valid JSON");
    return verdict_from_payload(inner);
  }
  return verdict_from_payload(root);
}

JudgeVerdict StubJudge::evaluate(const JudgeRequest& req) {
  if (req.candidate_answer == req.reference_answer) return {10, "exact match", 0};
  const double r = rouge_l(req.candidate_answer, req.reference_answer);
  return {static_cast<int>(std::lround(r / 10.0)), "rouge-l proxy", 0};
}

JudgeVerdict judge_score(const JudgeRequest& req, Judge& judge) {
  auto blank = [](std::string_view s) {
    for (unsigned char c : s) {
      if (!std::isspace(c)) return false;
    }
    return true;
  };
  if (blank(req.candidate_answer)) return {0, "empty candidate", 0};
  JudgeVerdict v = judge.evaluate(req);
  if (v.score < 0 || v.score > 10) {
    throw JudgeError("judge score " + std::to_string(v.score) + " outside 0-10");
  }
  return v;
}

HttpJudgeConfig HttpJudgeConfig::from_environment() {
  HttpJudgeConfig cfg;
  const char* url = std::getenv("JUDGE_URL");
  if (!url || !*url) throw std::invalid_argument("JUDGE_URL is not set");
  cfg.url = url;
  if (const char* key = std::getenv("JUDGE_API_KEY")) cfg.api_key = key;
  return cfg;
}

std::string_view to_string(ScoreKind k) { return k == ScoreKind::rouge_l ? "rouge_l" : "judge"; }

std::optional<ScoreKind> parse_score_kind(std::string_view name) {
  if (name == "rouge_l") return ScoreKind::rouge_l;
  if (name == "judge") return ScoreKind::judge;
  return std::nullopt;
}

ScoreValue Scorer::score(ScoreKind kind, std::string_view candidate, std::string_view reference,
                         const ScoreContext& ctx) const {
  if (kind == ScoreKind::rouge_l) return {kind, rouge_l(candidate, reference)};
  if (!judge_) throw std::logic_error("judge scoring requested without a judge");
  JudgeRequest req{ctx.language, std::string(ctx.question), std::string(reference),
                   std::string(candidate)};
  return {kind, static_cast<double>(judge_score(req, *judge_).score)};
}

}  // namespace mcki
