#include "forge/dedup.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/utf8.hpp"

namespace forge::dedup {
namespace {

std::vector<std::string> tokens_for(const Document& doc) {
    std::vector<std::string> out;
    std::string word;
    std::size_t pos = 0;
    while (pos < doc.text.size()) {
        const char32_t cp = unicode::to_lower(utf8::decode_one(doc.text, pos).value_or(0xFFFD));
        if (unicode::is_whitespace(cp)) {
            if (!word.empty()) out.push_back(std::move(word));
            word.clear();
            continue;
        }
        utf8::append(word, cp);
        if (doc.lang == Lang::zh) {
            out.push_back(std::move(word));
            word.clear();
        }
    }
    if (!word.empty()) out.push_back(std::move(word));
    return out;
}

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

}  // namespace

std::vector<std::string> shingles(const Document& doc, const ShingleOptions& opts) {
    const auto tokens = tokens_for(doc);
    const std::size_t width = std::max<std::size_t>(opts.width, 1);
    // en shingles join words with a space; zh shingles are plain substrings.
    const std::string_view sep = doc.lang == Lang::zh ? "" : " ";
    auto join = [&](std::size_t begin, std::size_t end) {
        std::string s;
        for (std::size_t i = begin; i < end; ++i) {
            if (i > begin) s += sep;
            s += tokens[i];
        }
        return s;
    };
    std::vector<std::string> out;
    if (tokens.empty()) return out;
    if (tokens.size() < width) {
        out.push_back(join(0, tokens.size()));
        return out;
    }
    out.reserve(tokens.size() - width + 1);
    for (std::size_t i = 0; i + width <= tokens.size(); ++i) out.push_back(join(i, i + width));
    return out;
}

std::uint64_t simhash_bits(const std::vector<std::string>& features) {
    std::array<std::int64_t, 64> acc{};
    for (const auto& f : features) {
        const std::uint64_t h = avalanche_hash(f);
        for (int bit = 0; bit < 64; ++bit) acc[static_cast<std::size_t>(bit)] += ((h >> bit) & 1U) ? 1 : -1;
    }
    std::uint64_t bits = 0;
    for (int bit = 0; bit < 64; ++bit) {
        if (acc[static_cast<std::size_t>(bit)] > 0) bits |= std::uint64_t{1} << bit;
    }
    return bits;
}

Fingerprint simhash(const Document& doc, const ShingleOptions& opts) {
    return {doc.id, simhash_bits(shingles(doc, opts))};
}

void BucketingConfig::validate() const {
    if (bands < 1 || bands > 64 || 64 % bands != 0) throw usage_error("bands must divide 64");
    if (hamming_threshold < 0 || bands < hamming_threshold + 1) {
        throw usage_error("bands must be >= hamming threshold + 1 for exact recall");
    }
}

std::vector<CandidatePair> bucket_candidates(const std::vector<Fingerprint>& fps, const BucketingConfig& cfg) {
    cfg.validate();
    const int width = cfg.bits_per_band();
    const std::uint64_t mask = width == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width) - 1;
    std::vector<CandidatePair> pairs;
    for (int band = 0; band < cfg.bands; ++band) {
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
        for (std::size_t i = 0; i < fps.size(); ++i) {
            buckets[(fps[i].bits >> (band * width)) & mask].push_back(i);
        }
        for (const auto& [key, members] : buckets) {
            for (std::size_t a = 0; a < members.size(); ++a) {
                for (std::size_t b = a + 1; b < members.size(); ++b) pairs.emplace_back(members[a], members[b]);
            }
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

std::vector<Cluster> cluster_edges(const std::vector<Fingerprint>& fps, const std::vector<CandidatePair>& edges) {
    DisjointSets sets(fps.size());
    for (const auto& [a, b] : edges) sets.unite(a, b);
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < fps.size(); ++i) groups[sets.find(i)].push_back(i);
    std::vector<Cluster> clusters;
    for (const auto& [root, members] : groups) {
        if (members.size() < 2) continue;
        std::vector<std::string> ids;
        ids.reserve(members.size());
        for (auto m : members) ids.push_back(fps[m].doc_id);
        std::sort(ids.begin(), ids.end());
        clusters.push_back({ids.front(), std::vector<std::string>(ids.begin() + 1, ids.end())});
    }
    std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) { return a.kept < b.kept; });
    return clusters;
}

DedupResult dedup(const std::vector<Document>& docs, const BucketingConfig& cfg, const ShingleOptions& opts) {
    cfg.validate();
    std::unordered_set<std::string> seen;
    std::vector<Fingerprint> fps;
    fps.reserve(docs.size());
    for (const auto& d : docs) {
        if (!seen.insert(d.id).second) throw data_error("duplicate document id '" + d.id + "'");
        fps.push_back(simhash(d, opts));
    }
    const auto candidates = bucket_candidates(fps, cfg);
    std::vector<CandidatePair> edges;
    for (const auto& p : candidates) {
        if (hamming(fps[p.first], fps[p.second]) <= cfg.hamming_threshold) edges.push_back(p);
    }
    DedupResult result;
    result.report.pair_count_checked = candidates.size();
    result.report.clusters = cluster_edges(fps, edges);
    std::unordered_set<std::string> dropped;
    for (const auto& c : result.report.clusters) dropped.insert(c.dropped.begin(), c.dropped.end());
    for (const auto& d : docs) {
        if (!dropped.count(d.id)) result.kept.push_back(d);
    }
    return result;
}

void write_fingerprints_csv(const std::filesystem::path& path, const std::vector<Fingerprint>& fps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "doc_id,hex16\n";
    for (const auto& f : fps) out << f.doc_id << ',' << to_hex16(f.bits) << '\n';
}

std::vector<Fingerprint> read_fingerprints_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "doc_id,hex16") throw data_error(path.string() + ": bad fingerprint header");
    std::vector<Fingerprint> fps;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw data_error(path.string() + ":" + std::to_string(line_no) + ": bad row");
        fps.push_back({line.substr(0, comma), parse_hex16(std::string_view(line).substr(comma + 1))});
    }
    return fps;
}

void write_report(const std::filesystem::path& path, const DedupReport& report) {
    nlohmann::json j;
    j["pair_count_checked"] = report.pair_count_checked;
    j["clusters"] = nlohmann::json::array();
    for (const auto& c : report.clusters) j["clusters"].push_back({{"kept", c.kept}, {"dropped", c.dropped}});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace forge::dedup
