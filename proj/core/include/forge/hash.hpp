#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace forge {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

/// splitmix64 finalizer: full avalanche on a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t avalanche_hash(std::string_view s) { return mix64(fnv1a64(s)); }

/// 16 lowercase hex digits.
std::string to_hex16(std::uint64_t v);
std::uint64_t parse_hex16(std::string_view s);

/// Content hash of a file (streamed); throws data_error if unreadable.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace forge
