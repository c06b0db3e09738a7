#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "forge/corpus_io.hpp"

namespace forge::dedup {

struct Fingerprint {
    std::string doc_id;
    std::uint64_t bits = 0;

    bool operator==(const Fingerprint&) const = default;
};

struct ShingleOptions {
    std::size_t width = 3;
};

/// Feature strings for a document: word shingles of lowercased text for en,
/// character shingles (whitespace removed) for zh. Texts shorter than the
/// shingle width yield one shingle of everything they contain.
std::vector<std::string> shingles(const Document& doc, const ShingleOptions& opts = {});

std::uint64_t simhash_bits(const std::vector<std::string>& features);
Fingerprint simhash(const Document& doc, const ShingleOptions& opts = {});

inline int hamming(std::uint64_t a, std::uint64_t b) { return __builtin_popcountll(a ^ b); }
inline int hamming(const Fingerprint& a, const Fingerprint& b) { return hamming(a.bits, b.bits); }

struct BucketingConfig {
    int bands = 4;
    int hamming_threshold = 3;

    int bits_per_band() const { return 64 / bands; }
    /// Throws usage_error unless bands divides 64 and bands >= threshold + 1.
    void validate() const;
};

/// Index pair (i < j) into the fingerprint sequence.
using CandidatePair = std::pair<std::size_t, std::size_t>;

/// Pairs agreeing exactly on at least one band, sorted and unique.
std::vector<CandidatePair> bucket_candidates(const std::vector<Fingerprint>& fps, const BucketingConfig& cfg);

struct Cluster {
    std::string kept;
    std::vector<std::string> dropped;

    bool operator==(const Cluster&) const = default;
};

struct DedupReport {
    std::vector<Cluster> clusters;
    std::size_t pair_count_checked = 0;
};

struct DedupResult {
    std::vector<Document> kept;
    DedupReport report;
};

/// Clusters documents whose candidate pairs fall within the Hamming threshold
/// (connected components) and keeps the smallest id of each cluster.
DedupResult dedup(const std::vector<Document>& docs, const BucketingConfig& cfg,
                  const ShingleOptions& opts = {});

/// Clustering step shared by dedup() and external callers that already hold
/// fingerprints and an edge list. Returns clusters with >= 2 members, ordered
/// by kept id.
std::vector<Cluster> cluster_edges(const std::vector<Fingerprint>& fps,
                                   const std::vector<CandidatePair>& edges);

void write_fingerprints_csv(const std::filesystem::path& path, const std::vector<Fingerprint>& fps);
std::vector<Fingerprint> read_fingerprints_csv(const std::filesystem::path& path);
void write_report(const std::filesystem::path& path, const DedupReport& report);

}  // namespace forge::dedup
