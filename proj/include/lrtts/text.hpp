#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lrtts::text {

/// Decodes UTF-8; invalid bytes become U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
std::string encode_utf8(char32_t cp);

/// Simple lowercase mapping for ASCII, Latin-1, Latin Extended-A, Greek and
/// basic Cyrillic. Other code points map to themselves.
char32_t to_lower(char32_t cp);

bool is_space(char32_t cp);

/// Letters and digits (any non-punctuation code point above ASCII counts).
bool is_word_char(char32_t cp);

/// ASCII apostrophe and U+2019.
bool is_apostrophe(char32_t cp);

/// Hyphens, dashes and slashes; treated as word separators.
bool is_separator_punct(char32_t cp);

}  // namespace lrtts::text
