#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace forge::utf8 {

/// Decodes one scalar value starting at `pos`; advances `pos` past it.
/// On an invalid sequence returns nullopt and skips its maximal valid prefix
/// (at least one byte).
std::optional<char32_t> decode_one(std::string_view s, std::size_t& pos);

bool is_valid(std::string_view s);

/// Throws data_error on invalid input.
std::vector<char32_t> decode(std::string_view s);

void append(std::string& out, char32_t cp);
std::string encode(char32_t cp);
std::string encode(const std::vector<char32_t>& cps);

/// Number of scalar values; invalid bytes count as one character each.
std::size_t char_count(std::string_view s);

/// Byte length of the sequence introduced by lead byte `b` (1 for invalid leads).
std::size_t sequence_length(unsigned char b);

/// Replaces every invalid byte with U+FFFD. `replaced` receives the count.
std::string sanitize(std::string_view s, std::size_t* replaced = nullptr);

}  // namespace forge::utf8

namespace forge::unicode {

bool is_punctuation(char32_t cp);
bool is_decimal_digit(char32_t cp);
bool is_whitespace(char32_t cp);
char32_t to_lower(char32_t cp);

}  // namespace forge::unicode
