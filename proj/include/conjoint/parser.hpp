#pragma once

// Validates raw completions against the response contract: exactly one
// integer between 0 and 100, nothing else.  Failures are values, never
// exceptions, and the parser is total over arbitrary byte sequences.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace conjoint {

enum class ParseFailure { Empty, NonNumeric, OutOfRange, ExtraContent };

inline std::string to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::Empty: return "empty";
    case ParseFailure::NonNumeric: return "non_numeric";
    case ParseFailure::OutOfRange: return "out_of_range";
    case ParseFailure::ExtraContent: return "extra_content";
  }
  return "unknown";
}

struct ParseOutcome {
  std::optional<int> score;
  std::optional<ParseFailure> failure;

  bool ok() const { return score.has_value(); }

  static ParseOutcome success(int value) { return {value, std::nullopt}; }
  static ParseOutcome failed(ParseFailure reason) { return {std::nullopt, reason}; }
};

// Leading/trailing whitespace (space, tab, CR, LF) is stripped; anything else
// around the digits is content and rejected.  A minus sign counts as
// punctuation, so negative numbers are NonNumeric.  Leading zeros are fine.
inline ParseOutcome parse_score(std::string_view raw) {
  constexpr std::string_view ws = " \t\r\n";
  std::size_t begin = raw.find_first_not_of(ws);
  if (begin == std::string_view::npos) return ParseOutcome::failed(ParseFailure::Empty);
  std::size_t end = raw.find_last_not_of(ws);
  std::string_view token = raw.substr(begin, end - begin + 1);

  bool all_digits = true;
  bool any_digit = false;
  for (unsigned char c : token) {
    if (c >= '0' && c <= '9')
      any_digit = true;
    else
      all_digits = false;
  }

  if (all_digits) {
    // Skip leading zeros, then cap the magnitude without risking overflow.
    std::size_t i = 0;
    while (i + 1 < token.size() && token[i] == '0') ++i;
    std::string_view digits = token.substr(i);
    if (digits.size() > 3) return ParseOutcome::failed(ParseFailure::OutOfRange);
    int value = 0;
    for (char c : digits) value = value * 10 + (c - '0');
    if (value > 100) return ParseOutcome::failed(ParseFailure::OutOfRange);
    return ParseOutcome::success(value);
  }

  if (token.size() >= 2 && token[0] == '-') {
    bool rest_digits = true;
    for (std::size_t i = 1; i < token.size(); ++i)
      if (token[i] < '0' || token[i] > '9') rest_digits = false;
    if (rest_digits) return ParseOutcome::failed(ParseFailure::NonNumeric);
  }

  return ParseOutcome::failed(any_digit ? ParseFailure::ExtraContent : ParseFailure::NonNumeric);
}

}  // namespace conjoint
