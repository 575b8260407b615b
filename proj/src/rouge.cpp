#include <algorithm>

#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

#include "mcki/scoring.hpp"

namespace mcki {

namespace {

bool is_single_char_script(UChar32 c) {
  UErrorCode err = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(c, &err);
  if (U_FAILURE(err)) return false;
  return script == USCRIPT_HAN || script == USCRIPT_HIRAGANA || script == USCRIPT_KATAKANA;
}

bool is_word_char(UChar32 c) {
  if (u_isalnum(c)) return true;
  const auto type = u_charType(c);
  return type == U_NON_SPACING_MARK || type == U_COMBINING_SPACING_MARK;
}

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(buf, len, U8_MAX_LENGTH, c, error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string word;
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    if (c < 0) {  // ill-formed sequence
      flush();
      continue;
    }
    if (is_single_char_script(c)) {
      flush();
      std::string token;
      append_utf8(token, c);
      tokens.push_back(std::move(token));
    } else if (is_word_char(c)) {
      append_utf8(word, u_tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeComponents rouge_l_components(std::span<const std::string> candidate,
                                   std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return {};
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return {};
  RougeComponents r;
  r.precision = lcs / static_cast<double>(candidate.size());
  r.recall = lcs / static_cast<double>(reference.size());
  r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double rouge_l_tokens(std::span<const std::string> candidate,
                      std::span<const std::string> reference) {
  return 100.0 * rouge_l_components(candidate, reference).f1;
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_l_tokens(c, r);
}

}  // namespace mcki
