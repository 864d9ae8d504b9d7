#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace transrev {

enum class CorpusFormat { amazon, yelp };

namespace detail {

// Word-character test for the tokenizer's \w class. ASCII side is exactly
// [a-z0-9_] (input is lowercased first). Non-ASCII codepoints are matched
// against a pinned table of the common Unicode Letter/Number blocks; this
// stands in for a full UCD lookup and is part of the documented contract.
inline bool is_word_codepoint(char32_t c) {
  if (c < 0x80)
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' ||
           (c >= 'A' && c <= 'Z');
  struct Range {
    char32_t lo, hi;
  };
  static constexpr Range kRanges[] = {
      {0x00C0, 0x00D6}, {0x00D8, 0x00F6}, {0x00F8, 0x02AF},  // Latin ext.
      {0x0370, 0x03FF}, {0x0400, 0x04FF},                    // Greek, Cyrillic
      {0x0531, 0x058F},                                      // Armenian
      {0x05D0, 0x05EA},                                      // Hebrew
      {0x0620, 0x064A}, {0x0660, 0x0669}, {0x066E, 0x06D3},  // Arabic
      {0x0900, 0x097F},                                      // Devanagari
      {0x0E01, 0x0E5B},                                      // Thai
      {0x1E00, 0x1EFF},                                      // Latin ext. add.
      {0x3040, 0x309F}, {0x30A0, 0x30FF},                    // kana
      {0x3400, 0x4DBF}, {0x4E00, 0x9FFF},                    // CJK
      {0xAC00, 0xD7A3},                                      // Hangul
      {0xFF10, 0xFF19}, {0xFF21, 0xFF3A}, {0xFF41, 0xFF5A},  // fullwidth
  };
  for (const auto& r : kRanges)
    if (c >= r.lo && c <= r.hi) return true;
  return false;
}

// Decodes one UTF-8 codepoint starting at s[i]; advances i. Malformed bytes
// decode as U+FFFD and consume a single byte, so bad input degrades to
// non-word separators instead of derailing the scan.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(len) > s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// ASCII A-Z plus the Latin-1 supplement uppercase letters.
inline char32_t to_lower_codepoint(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c >= 0x00C0 && c <= 0x00DE && c != 0x00D7) return c + 0x20;
  return c;
}

}  // namespace detail

// Lowercases `text` and emits maximal runs of word characters, in order.
// Yelp reviews are full-length and get truncated to their first 200 tokens;
// Amazon summaries are short and kept whole.
inline std::vector<std::string> tokenize(std::string_view text,
                                         CorpusFormat format) {
  constexpr std::size_t kYelpTokenCap = 200;
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = detail::decode_utf8(text, i);
    cp = detail::to_lower_codepoint(cp);
    if (detail::is_word_codepoint(cp)) {
      detail::append_utf8(current, cp);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
      if (format == CorpusFormat::yelp && tokens.size() >= kYelpTokenCap)
        return tokens;
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (format == CorpusFormat::yelp && tokens.size() > kYelpTokenCap)
    tokens.resize(kYelpTokenCap);
  return tokens;
}

}  // namespace transrev
