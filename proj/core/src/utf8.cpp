#include "forge/utf8.hpp"

#include <algorithm>
#include <iterator>

#include "forge/error.hpp"

namespace forge {
namespace {

struct CodeRange {
    char32_t lo;
    char32_t hi;
};

struct CaseMapping {
    char32_t from;
    char32_t to;
};

#include "unicode_tables.inc"

template <std::size_t N>
bool in_ranges(const CodeRange (&table)[N], char32_t cp) {
    auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                               [](char32_t v, const CodeRange& r) { return v < r.lo; });
    if (it == std::begin(table)) return false;
    --it;
    return cp <= it->hi;
}

}  // namespace

namespace utf8 {

std::size_t sequence_length(unsigned char b) {
    if (b < 0x80) return 1;
    if ((b & 0xE0) == 0xC0) return 2;
    if ((b & 0xF0) == 0xE0) return 3;
    if ((b & 0xF8) == 0xF0) return 4;
    return 1;
}

std::optional<char32_t> decode_one(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    ++pos;
    if (b0 < 0x80) return b0;
    std::size_t len = 0;
    char32_t cp = 0;
    // Allowed range of the second byte rules out overlongs, surrogates and
    // values past U+10FFFF.
    unsigned char lo = 0x80;
    unsigned char hi = 0xBF;
    if (b0 >= 0xC2 && b0 <= 0xDF) {
        len = 2;
        cp = b0 & 0x1F;
    } else if (b0 >= 0xE0 && b0 <= 0xEF) {
        len = 3;
        cp = b0 & 0x0F;
        if (b0 == 0xE0) lo = 0xA0;
        if (b0 == 0xED) hi = 0x9F;
    } else if (b0 >= 0xF0 && b0 <= 0xF4) {
        len = 4;
        cp = b0 & 0x07;
        if (b0 == 0xF0) lo = 0x90;
        if (b0 == 0xF4) hi = 0x8F;
    } else {
        return std::nullopt;
    }
    // On failure pos ends after the longest valid prefix, so a truncated
    // sequence counts as one error.
    for (std::size_t i = 1; i < len; ++i) {
        if (pos >= s.size()) return std::nullopt;
        const auto b = static_cast<unsigned char>(s[pos]);
        if (b < lo || b > hi) return std::nullopt;
        lo = 0x80;
        hi = 0xBF;
        cp = (cp << 6) | (b & 0x3F);
        ++pos;
    }
    return cp;
}

bool is_valid(std::string_view s) {
    std::size_t pos = 0;
    while (pos < s.size()) {
        if (!decode_one(s, pos)) return false;
    }
    return true;
}

std::vector<char32_t> decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t at = pos;
        auto cp = decode_one(s, pos);
        if (!cp) throw data_error("invalid UTF-8 at byte offset " + std::to_string(at));
        out.push_back(*cp);
    }
    return out;
}

void append(std::string& out, char32_t cp) {
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

std::string encode(char32_t cp) {
    std::string out;
    append(out, cp);
    return out;
}

std::string encode(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) append(out, cp);
    return out;
}

std::size_t char_count(std::string_view s) {
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos < s.size()) {
        decode_one(s, pos);
        ++n;
    }
    return n;
}

std::string sanitize(std::string_view s, std::size_t* replaced) {
    std::string out;
    out.reserve(s.size());
    std::size_t bad = 0;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t at = pos;
        if (decode_one(s, pos)) {
            out.append(s.substr(at, pos - at));
        } else {
            append(out, 0xFFFD);
            ++bad;
        }
    }
    if (replaced) *replaced = bad;
    return out;
}

}  // namespace utf8

namespace unicode {

bool is_punctuation(char32_t cp) { return in_ranges(kPunctuation, cp); }
bool is_decimal_digit(char32_t cp) { return in_ranges(kDecimalDigit, cp); }
bool is_whitespace(char32_t cp) { return in_ranges(kWhitespace, cp); }

char32_t to_lower(char32_t cp) {
    if (cp < 0x80) return (cp >= 'A' && cp <= 'Z') ? cp + 32 : cp;
    auto it = std::lower_bound(std::begin(kLowercase), std::end(kLowercase), cp,
                               [](const CaseMapping& m, char32_t v) { return m.from < v; });
    if (it != std::end(kLowercase) && it->from == cp) return it->to;
    return cp;
}

}  // namespace unicode
}  // namespace forge
