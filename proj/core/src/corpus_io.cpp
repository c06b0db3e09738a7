#include "forge/corpus_io.hpp"

#include <nlohmann/json.hpp>
#include <ostream>
#include <unordered_set>

#include "forge/error.hpp"
#include "forge/utf8.hpp"

namespace forge {

using nlohmann::json;

std::string_view to_string(Lang lang) { return lang == Lang::zh ? "zh" : "en"; }

std::optional<Lang> parse_lang(std::string_view s) {
    if (s == "en") return Lang::en;
    if (s == "zh") return Lang::zh;
    return std::nullopt;
}

std::optional<Lang> known_source_language(std::string_view source) {
    struct Entry {
        std::string_view name;
        Lang lang;
    };
    static constexpr Entry kTable[] = {
        {"Arxiv", Lang::en},       {"Book", Lang::en},        {"C4", Lang::en},
        {"Common Crawl", Lang::en}, {"Github", Lang::en},      {"Stackexchange", Lang::en},
        {"Wikipedia", Lang::en},   {"BookCorpus", Lang::en},  {"PubMed", Lang::en},
        {"AMPS", Lang::en},        {"FanFics", Lang::en},     {"OpenWebMath", Lang::en},
        {"StarCoder", Lang::en},   {"Law", Lang::zh},         {"News", Lang::zh},
        {"Patent", Lang::zh},      {"Webtext", Lang::zh},     {"PTD", Lang::zh},
    };
    for (const auto& e : kTable) {
        if (e.name == source) return e.lang;
    }
    return std::nullopt;
}

Document parse_document(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw data_error(std::string("not a JSON object: ") + e.what());
    }
    if (!j.is_object()) throw data_error("record is not an object");
    auto field = [&](const char* name) -> std::string {
        auto it = j.find(name);
        if (it == j.end() || !it->is_string()) {
            throw data_error(std::string("missing string field '") + name + "'");
        }
        return it->get<std::string>();
    };
    Document doc;
    doc.id = field("id");
    doc.text = field("text");
    doc.source = field("source");
    const auto lang = field("lang");
    auto parsed = parse_lang(lang);
    if (!parsed) throw data_error("unknown lang '" + lang + "'");
    doc.lang = *parsed;
    if (doc.id.empty()) throw data_error("empty id");
    if (!utf8::is_valid(doc.text)) throw data_error("text is not valid UTF-8");
    if (auto expected = known_source_language(doc.source); expected && *expected != doc.lang) {
        throw data_error("lang '" + lang + "' does not match source '" + doc.source + "'");
    }
    return doc;
}

std::string serialize_document(const Document& doc) {
    json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    j["source"] = doc.source;
    j["lang"] = std::string(to_string(doc.lang));
    return j.dump();
}

void write_document(std::ostream& out, const Document& doc) { out << serialize_document(doc) << '\n'; }

DocumentReader::DocumentReader(const std::filesystem::path& path, OnRecordError policy)
    : in_(path, std::ios::binary), path_(path), policy_(policy) {
    if (!in_) throw data_error("cannot open documents file " + path.string());
}

std::optional<Document> DocumentReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            return parse_document(line);
        } catch (const Error& e) {
            if (policy_ == OnRecordError::abort) {
                throw data_error(path_.string() + ": line " + std::to_string(line_no_) + ": " + e.what());
            }
            errors_.push_back({line_no_, e.what()});
        }
    }
    return std::nullopt;
}

DocumentReader load_documents(const std::filesystem::path& path, OnRecordError policy) {
    return DocumentReader(path, policy);
}

std::vector<Document> read_all_documents(const std::filesystem::path& path, OnRecordError policy) {
    DocumentReader reader(path, policy);
    std::vector<Document> docs;
    while (auto doc = reader.next()) docs.push_back(std::move(*doc));
    return docs;
}

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    for (const auto& d : docs) write_document(out, d);
}

void FilterRules::validate() const {
    if (!(min_punct_ratio >= 0.0 && min_punct_ratio <= max_punct_ratio && max_punct_ratio <= 1.0)) {
        throw usage_error("filter rules require 0 <= min_punct_ratio <= max_punct_ratio <= 1");
    }
}

FilterRules load_filter_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open filter rules " + path.string());
    FilterRules rules;
    try {
        const json j = json::parse(in);
        rules.min_text_chars = j.value("min_text_chars", rules.min_text_chars);
        rules.min_mean_paragraph_chars = j.value("min_mean_paragraph_chars", rules.min_mean_paragraph_chars);
        rules.max_punct_ratio = j.value("max_punct_ratio", rules.max_punct_ratio);
        rules.min_punct_ratio = j.value("min_punct_ratio", rules.min_punct_ratio);
    } catch (const json::exception& e) {
        throw usage_error("bad filter rules " + path.string() + ": " + e.what());
    }
    rules.validate();
    return rules;
}

std::string_view to_string(FilterReason reason) {
    switch (reason) {
        case FilterReason::ok: return "ok";
        case FilterReason::too_short: return "too_short";
        case FilterReason::short_paragraphs: return "short_paragraphs";
        case FilterReason::punct_too_high: return "punct_too_high";
        case FilterReason::punct_too_low: return "punct_too_low";
    }
    return "?";
}

TextSignals measure_text(std::string_view text) {
    TextSignals s;
    std::size_t para_chars_total = 0;
    // Every non-blank line is its own paragraph; its length excludes
    // leading and trailing whitespace.
    std::size_t line_chars = 0;
    std::size_t pending_space = 0;
    bool line_started = false;
    auto end_line = [&] {
        if (line_started) {
            ++s.paragraphs;
            para_chars_total += line_chars;
        }
        line_chars = 0;
        pending_space = 0;
        line_started = false;
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        const char32_t cp = utf8::decode_one(text, pos).value_or(0xFFFD);
        ++s.chars;
        if (cp == '\n') {
            end_line();
            continue;
        }
        if (unicode::is_whitespace(cp)) {
            if (line_started) ++pending_space;
            continue;
        }
        ++s.non_space_chars;
        if (unicode::is_punctuation(cp)) ++s.punct_chars;
        line_chars += pending_space + 1;
        pending_space = 0;
        line_started = true;
    }
    end_line();
    if (s.paragraphs > 0) s.mean_paragraph_chars = static_cast<double>(para_chars_total) / s.paragraphs;
    if (s.non_space_chars > 0) s.punct_ratio = static_cast<double>(s.punct_chars) / s.non_space_chars;
    return s;
}

FilterVerdict heuristic_filter(const Document& doc, const FilterRules& rules) {
    auto reject = [](FilterReason r) { return FilterVerdict{false, r}; };
    const TextSignals s = measure_text(doc.text);
    if (s.non_space_chars == 0 || s.chars < rules.min_text_chars) return reject(FilterReason::too_short);
    if (s.mean_paragraph_chars < static_cast<double>(rules.min_mean_paragraph_chars)) {
        return reject(FilterReason::short_paragraphs);
    }
    if (s.punct_ratio > rules.max_punct_ratio) return reject(FilterReason::punct_too_high);
    if (s.punct_ratio < rules.min_punct_ratio) return reject(FilterReason::punct_too_low);
    return {};
}

void CorpusStats::add(const Document& doc) {
    ++doc_count;
    total_chars += utf8::char_count(doc.text);
    total_utf8_bytes += doc.text.size();
    ++per_source_counts[doc.source];
}

CorpusStats& CorpusStats::operator+=(const CorpusStats& other) {
    doc_count += other.doc_count;
    total_chars += other.total_chars;
    total_utf8_bytes += other.total_utf8_bytes;
    for (const auto& [src, n] : other.per_source_counts) per_source_counts[src] += n;
    return *this;
}

CorpusStats corpus_stats(const std::vector<Document>& docs) {
    CorpusStats stats;
    for (const auto& d : docs) stats.add(d);
    return stats;
}

}  // namespace forge
