#include "forge/hash.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "forge/error.hpp"

namespace forge {

std::string to_hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, 16);
}

std::uint64_t parse_hex16(std::string_view s) {
    if (s.size() != 16) throw data_error("expected 16 hex digits, got '" + std::string(s) + "'");
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') {
            v |= static_cast<std::uint64_t>(c - '0');
        } else if (c >= 'a' && c <= 'f') {
            v |= static_cast<std::uint64_t>(c - 'a' + 10);
        } else {
            throw data_error("invalid hex digit in '" + std::string(s) + "'");
        }
    }
    return v;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::array<char, 1 << 16> buf{};
    std::uint64_t h = kFnvOffset;
    while (in) {
        in.read(buf.data(), buf.size());
        h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    return mix64(h);
}

}  // namespace forge
