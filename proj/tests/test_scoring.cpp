#include <random>

#include "doctest.h"
#include "mcki/scoring.hpp"

using namespace mcki;
using Tokens = std::vector<std::string>;

namespace {

bool is_subsequence(const Tokens& sub, const Tokens& seq) {
  std::size_t j = 0;
  for (const auto& t : seq) {
    if (j < sub.size() && sub[j] == t) ++j;
  }
  return j == sub.size();
}

// Enumerates every subsequence of `a` and keeps the longest one found in `b`.
std::size_t brute_force_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

double brute_force_rouge(const Tokens& c, const Tokens& r) {
  if (c.empty() || r.empty()) return 0.0;
  const double lcs = static_cast<double>(brute_force_lcs(c, r));
  if (lcs == 0) return 0.0;
  const double p = lcs / c.size(), q = lcs / r.size();
  return 100.0 * (2 * p * q / (p + q));
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len) {
  static const Tokens vocab{"a", "b", "c", "d", "e"};
  std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, vocab.size() - 1);
  Tokens out(len(rng));
  for (auto& t : out) t = vocab[pick(rng)];
  return out;
}

}  // namespace

TEST_SUITE("scoring") {
  TEST_CASE("tokenizer") {
    CHECK(tokenize("Hello, world") == Tokens{"hello", "world"});
    CHECK(tokenize("谢谢你") == Tokens{"谢", "谢", "你"});
    CHECK(tokenize("abc谢谢") == Tokens{"abc", "谢", "谢"});
    CHECK(tokenize("ひらがなカタ") == Tokens{"ひ", "ら", "が", "な", "カ", "タ"});
    CHECK(tokenize("  --  ").empty());
    CHECK(tokenize("").empty());
    CHECK(tokenize("ÉCOLE 42x") == Tokens{"école", "42x"});
    CHECK(tokenize("مرحبا بالعالم.") == Tokens{"مرحبا", "بالعالم"});
    CHECK(tokenize("Zürich's") == Tokens{"zürich", "s"});
  }

  TEST_CASE("rouge-l examples") {
    CHECK(rouge_l("the cat sat", "the cat sat") == doctest::Approx(100.0));
    CHECK(rouge_l("a b c d", "a x c y") == doctest::Approx(50.0));
    CHECK(rouge_l("", "anything") == 0.0);
    CHECK(rouge_l("anything", "") == 0.0);
    CHECK(rouge_l("a b", "c d") == 0.0);
    CHECK(rouge_l("我喜欢猫", "我喜欢狗") == doctest::Approx(75.0));
    const auto parts = rouge_l_components(tokenize("a b c d"), tokenize("a x c y"));
    CHECK(parts.precision == doctest::Approx(0.5));
    CHECK(parts.recall == doctest::Approx(0.5));
  }

  TEST_CASE("rouge-l matches the brute-force oracle") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto a = random_tokens(rng, 8), b = random_tokens(rng, 8);
      REQUIRE(lcs_length(a, b) == brute_force_lcs(a, b));
      REQUIRE(rouge_l_tokens(a, b) == brute_force_rouge(a, b));
    }
  }

  TEST_CASE("rouge-l properties") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      auto a = random_tokens(rng, 8), b = random_tokens(rng, 8);
      CHECK(rouge_l_tokens(a, b) == doctest::Approx(rouge_l_tokens(b, a)).epsilon(1e-12));
      if (!a.empty()) CHECK(rouge_l_tokens(a, a) == doctest::Approx(100.0));
      const double v = rouge_l_tokens(a, b);
      CHECK(v >= 0.0);
      CHECK(v <= 100.0);
      if (a.empty() || b.empty()) continue;
      const double before = rouge_l_components(a, b).precision;
      a.push_back("zz-absent");
      CHECK(rouge_l_components(a, b).precision <= before);
    }
  }

  TEST_CASE("judge reply parsing") {
    auto v = parse_judge_reply(R"({"score": 7, "reason": "partially consistent"})");
    CHECK(v.score == 7);
    CHECK(v.reason == "partially consistent");
    CHECK_THROWS_AS(parse_judge_reply(R"({"score": 11, "reason": "x"})"), JudgeError);
    CHECK_THROWS_AS(parse_judge_reply(R"({"score": -1, "reason": "x"})"), JudgeError);
    CHECK_THROWS_AS(parse_judge_reply(R"({"score": 6.5, "reason": "x"})"), JudgeError);
    CHECK_THROWS_AS(parse_judge_reply(R"({"reason": "x"})"), JudgeError);
    CHECK_THROWS_AS(parse_judge_reply("not json"), JudgeError);

    const std::string envelope =
        R"({"choices":[{"message":{"role":"assistant","content":"```json\n{\"score\": 9, \"reason\": \"ok\"}\n```"}}]})";
    CHECK(parse_judge_reply(envelope).score == 9);
    CHECK_THROWS_AS(parse_judge_reply(R"({"choices": []})"), JudgeError);
  }

  TEST_CASE("judge prompt rendering") {
    JudgeRequest req{Partition::zh, "Q?", "ref {x}", "cand"};
    const auto text = render_judge_prompt("{language}|{question}|{reference_answer}|{candidate_answer}|{other}", req);
    CHECK(text == std::string(language_name(Partition::zh)) + "|Q?|ref {x}|cand|{other}");
    const auto full = render_judge_prompt(kDefaultJudgePrompt, req);
    CHECK(full.find("{question}") == std::string::npos);
    CHECK(full.find("Q?") != std::string::npos);
  }

  TEST_CASE("stub judge and short-circuit") {
    StubJudge stub;
    CHECK(judge_score({Partition::en, "q", "same answer", "same answer"}, stub).score == 10);
    CHECK(judge_score({Partition::en, "q", "a b c d", "a x c y"}, stub).score == 5);
    CHECK(judge_score({Partition::en, "q", "ref", "   "}, stub).score == 0);

    struct Wild : Judge {
      JudgeVerdict evaluate(const JudgeRequest&) override { return {12, "", 0}; }
      std::string name() const override { return "wild"; }
    } wild;
    CHECK_THROWS_AS(judge_score({Partition::en, "q", "r", "c"}, wild), JudgeError);
  }

  TEST_CASE("score dispatch") {
    Scorer rouge_only;
    CHECK(rouge_only.score(ScoreKind::rouge_l, "x", "x", {}).value == 100.0);
    CHECK(rouge_only.score(ScoreKind::rouge_l, "a b", "c d", {}).value == 0.0);
    CHECK_THROWS_AS(rouge_only.score(ScoreKind::judge, "x", "x", {}), std::logic_error);

    Scorer with_judge(std::make_shared<StubJudge>());
    CHECK(with_judge.score(ScoreKind::judge, "x y", "x y", {}).value == 10.0);
    CHECK(max_score(ScoreKind::rouge_l) == 100.0);
    CHECK(max_score(ScoreKind::judge) == 10.0);
    CHECK(parse_score_kind("judge") == ScoreKind::judge);
    CHECK_FALSE(parse_score_kind("bleu").has_value());
  }
}
