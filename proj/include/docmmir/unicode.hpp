#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace docmmir::unicode {

bool is_valid_utf8(std::string_view text);

/// Decodes UTF-8 into code points. Throws DataError on malformed input.
std::vector<char32_t> decode(std::string_view text);

std::string encode(char32_t cp);

bool is_letter(char32_t cp);   // general category L*
bool is_number(char32_t cp);   // general category N*
bool is_space(char32_t cp);    // White_Space property

/// Letters, numbers or underscore.
inline bool is_word(char32_t cp) { return cp == U'_' || is_letter(cp) || is_number(cp); }

}  // namespace docmmir::unicode
