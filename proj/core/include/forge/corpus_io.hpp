#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

enum class Lang { en, zh };

std::string_view to_string(Lang lang);
std::optional<Lang> parse_lang(std::string_view s);

struct Document {
    std::string id;
    std::string text;
    std::string source;
    Lang lang = Lang::en;

    bool operator==(const Document&) const = default;
};

/// Language of a known mixture dataset name, if the name is one of them.
std::optional<Lang> known_source_language(std::string_view source);

/// Parses one documents-file line. Throws data_error describing the defect.
Document parse_document(std::string_view line);
std::string serialize_document(const Document& doc);
void write_document(std::ostream& out, const Document& doc);

struct RecordError {
    std::size_t line = 0;
    std::string message;
};

enum class OnRecordError { skip, abort };

/// Streams documents from a line-delimited file, one record at a time.
class DocumentReader {
public:
    DocumentReader(const std::filesystem::path& path, OnRecordError policy);

    /// Next well-formed document, or nullopt at end of file. In abort mode a
    /// malformed line throws data_error naming the line number.
    std::optional<Document> next();

    const std::vector<RecordError>& errors() const { return errors_; }
    std::size_t line_number() const { return line_no_; }

private:
    std::ifstream in_;
    std::filesystem::path path_;
    OnRecordError policy_;
    std::size_t line_no_ = 0;
    std::vector<RecordError> errors_;
};

DocumentReader load_documents(const std::filesystem::path& path,
                              OnRecordError policy = OnRecordError::abort);

/// Convenience: drains a reader into memory.
std::vector<Document> read_all_documents(const std::filesystem::path& path,
                                         OnRecordError policy = OnRecordError::abort);
void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs);

struct FilterRules {
    std::size_t min_text_chars = 200;
    std::size_t min_mean_paragraph_chars = 40;
    double max_punct_ratio = 0.25;
    double min_punct_ratio = 0.0;

    /// Throws usage_error when the ratios are out of order or outside [0,1].
    void validate() const;
};

FilterRules load_filter_rules(const std::filesystem::path& path);

enum class FilterReason { ok, too_short, short_paragraphs, punct_too_high, punct_too_low };

std::string_view to_string(FilterReason reason);

struct FilterVerdict {
    bool keep = true;
    FilterReason reason = FilterReason::ok;

    bool operator==(const FilterVerdict&) const = default;
};

/// Measurements the filter decides on, exposed for reporting.
struct TextSignals {
    std::size_t chars = 0;
    std::size_t non_space_chars = 0;
    std::size_t punct_chars = 0;
    std::size_t paragraphs = 0;
    double mean_paragraph_chars = 0.0;
    double punct_ratio = 0.0;
};

TextSignals measure_text(std::string_view text);

FilterVerdict heuristic_filter(const Document& doc, const FilterRules& rules);

struct CorpusStats {
    std::size_t doc_count = 0;
    std::size_t total_chars = 0;
    std::size_t total_utf8_bytes = 0;
    std::map<std::string, std::size_t> per_source_counts;

    void add(const Document& doc);
    CorpusStats& operator+=(const CorpusStats& other);
    bool operator==(const CorpusStats&) const = default;
};

CorpusStats corpus_stats(const std::vector<Document>& docs);

}  // namespace forge
