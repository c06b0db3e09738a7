#include "forge/ngram.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "forge/error.hpp"
#include "forge/utf8.hpp"

namespace forge::ngram {
namespace {

bool is_sentence_end(char32_t cp) {
    return cp == '.' || cp == '!' || cp == '?' || cp == U'。' || cp == U'！' || cp == U'？';
}

std::vector<WordId> unpack_key(const std::string& key) {
    std::vector<WordId> ids(key.size() / sizeof(WordId));
    std::memcpy(ids.data(), key.data(), key.size());
    return ids;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(std::string_view s) {
    // strtod needs a terminated buffer.
    std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end == tmp.c_str() || *end != '\0') throw data_error("bad number '" + tmp + "' in n-gram model");
    return v;
}

}  // namespace

std::vector<std::vector<std::string>> split_sentences(std::string_view text, Lang lang) {
    std::vector<std::vector<std::string>> sentences;
    std::vector<std::string> current;
    std::string word;
    auto end_word = [&] {
        if (!word.empty()) current.push_back(std::move(word));
        word.clear();
    };
    auto end_sentence = [&] {
        end_word();
        if (!current.empty()) sentences.push_back(std::move(current));
        current.clear();
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        const char32_t cp = utf8::decode_one(text, pos).value_or(0xFFFD);
        if (cp == '\n') {
            end_sentence();
            continue;
        }
        if (unicode::is_whitespace(cp)) {
            end_word();
            continue;
        }
        utf8::append(word, cp);
        if (lang == Lang::zh) end_word();
        if (is_sentence_end(cp)) end_sentence();
    }
    end_sentence();
    return sentences;
}

std::string pack_key(const WordId* ids, std::size_t n) {
    std::string key(n * sizeof(WordId), '\0');
    std::memcpy(key.data(), ids, key.size());
    return key;
}

WordId NgramModel::word_id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnkId : it->second;
}

const NgramModel::Entry* NgramModel::find(const WordId* ids, std::size_t n) const {
    if (n == 0 || n > levels_.size()) return nullptr;
    const auto& table = levels_[n - 1];
    auto it = table.find(pack_key(ids, n));
    return it == table.end() ? nullptr : &it->second;
}

double NgramModel::log_prob_ids(const WordId* context, std::size_t context_len, WordId word) const {
    const std::size_t max_ctx = levels_.empty() ? 0 : levels_.size() - 1;
    const std::size_t n = std::min(context_len, max_ctx);
    std::vector<WordId> gram(context + (context_len - n), context + context_len);
    gram.push_back(word);
    double backoff = 0.0;
    for (std::size_t len = n + 1; len >= 1; --len) {
        const WordId* start = gram.data() + (n + 1 - len);
        if (const Entry* e = find(start, len)) {
            return (backoff + e->log10_prob) * std::numbers::ln10;
        }
        if (len > 1) {
            if (const Entry* ctx = find(start, len - 1)) backoff += ctx->log10_backoff;
        }
    }
    // Unreachable for a trained model: every vocabulary word has a unigram.
    return kNoProb * std::numbers::ln10;
}

double NgramModel::log_prob(const std::vector<std::string>& context, std::string_view word) const {
    std::vector<WordId> ids;
    ids.reserve(context.size());
    for (const auto& w : context) ids.push_back(word_id(w));
    return log_prob_ids(ids.data(), ids.size(), word_id(word));
}

NgramModel train_kn(const std::vector<Document>& docs, const KnOptions& opts) {
    if (opts.order < 1) throw usage_error("n-gram order must be >= 1");
    if (!(opts.discount > 0.0 && opts.discount <= 1.0)) throw usage_error("discount must lie in (0, 1]");

    std::vector<std::vector<std::string>> sentences;
    for (const auto& d : docs) {
        auto s = split_sentences(d.text, d.lang);
        sentences.insert(sentences.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    if (sentences.empty()) throw data_error("cannot train an n-gram model on an empty corpus");

    NgramModel m;
    m.order_ = opts.order;
    m.discount_ = opts.discount;
    m.lang_ = docs.front().lang;

    std::set<std::string> types;
    for (const auto& s : sentences) {
        for (const auto& w : s) {
            if (w != kUnk && w != kBos && w != kEos) types.insert(w);
        }
    }
    m.vocab_ = {std::string(kUnk), std::string(kBos), std::string(kEos)};
    m.vocab_.insert(m.vocab_.end(), types.begin(), types.end());
    for (WordId i = 0; i < m.vocab_.size(); ++i) m.index_.emplace(m.vocab_[i], i);

    const auto order = static_cast<std::size_t>(opts.order);
    std::vector<std::unordered_map<std::string, double>> raw(order);
    std::vector<WordId> padded;
    for (const auto& s : sentences) {
        padded.assign(1, kBosId);
        for (const auto& w : s) {
            const WordId id = m.word_id(w);
            padded.push_back(id == kBosId || id == kEosId ? kUnkId : id);
        }
        padded.push_back(kEosId);
        for (std::size_t end = 1; end < padded.size(); ++end) {
            for (std::size_t k = 1; k <= std::min(order, end + 1); ++k) {
                raw[k - 1][pack_key(padded.data() + end + 1 - k, k)] += 1.0;
            }
        }
    }

    // Adjusted counts: raw counts at the top order and for n-grams that start
    // at <s>; elsewhere the number of distinct left extensions.
    std::vector<std::unordered_map<std::string, double>> adjusted(order);
    adjusted[order - 1] = raw[order - 1];
    for (std::size_t k = 1; k < order; ++k) {
        auto& table = adjusted[k - 1];
        for (const auto& [key, count] : raw[k]) {
            table[key.substr(sizeof(WordId))] += 1.0;
        }
        for (const auto& [key, count] : raw[k - 1]) {
            WordId first;
            std::memcpy(&first, key.data(), sizeof first);
            if (first == kBosId) table[key] = count;
        }
    }

    const double d = opts.discount;
    m.levels_.resize(1);
    {
        double total = 0.0;
        double types_seen = 0.0;
        for (const auto& [key, a] : adjusted[0]) {
            total += a;
            types_seen += 1.0;
        }
        const double uniform = 1.0 / static_cast<double>(m.predictable_size());
        auto& level = m.levels_[0];
        for (WordId w = 0; w < m.vocab_.size(); ++w) {
            if (w == kBosId) {
                level[pack_key(&w, 1)] = {};
                continue;
            }
            auto it = adjusted[0].find(pack_key(&w, 1));
            const double a = it == adjusted[0].end() ? 0.0 : it->second;
            const double p = std::max(a - d, 0.0) / total + d * types_seen / total * uniform;
            level[pack_key(&w, 1)] = {std::log10(p), 0.0};
        }
    }

    for (std::size_t k = 2; k <= order; ++k) {
        struct ContextStats {
            double total = 0.0;
            double distinct = 0.0;
        };
        std::unordered_map<std::string, ContextStats> contexts;
        for (const auto& [key, a] : adjusted[k - 1]) {
            auto& c = contexts[key.substr(0, (k - 1) * sizeof(WordId))];
            c.total += a;
            c.distinct += 1.0;
        }
        std::unordered_map<std::string, NgramModel::Entry> level;
        for (const auto& [key, a] : adjusted[k - 1]) {
            const auto ids = unpack_key(key);
            const auto& c = contexts.at(key.substr(0, (k - 1) * sizeof(WordId)));
            const double lower = std::exp(m.log_prob_ids(ids.data() + 1, k - 2, ids.back()));
            const double p = std::max(a - d, 0.0) / c.total + d * c.distinct / c.total * lower;
            level[key] = {std::log10(p), 0.0};
        }
        for (const auto& [ctx, c] : contexts) {
            m.levels_[k - 2][ctx].log10_backoff = std::log10(d * c.distinct / c.total);
        }
        m.levels_.push_back(std::move(level));
    }
    return m;
}

void write_model(std::ostream& out, const NgramModel& model) {
    out << "forge-kn 1\n";
    out << "lang " << to_string(model.lang_) << '\n';
    out << "order " << model.order_ << '\n';
    out << "discount " << format_double(model.discount_) << '\n';
    out << "\\data\\\n";
    for (std::size_t k = 0; k < model.levels_.size(); ++k) {
        out << "ngram " << k + 1 << '=' << model.levels_[k].size() << '\n';
    }
    for (std::size_t k = 0; k < model.levels_.size(); ++k) {
        out << "\n\\" << k + 1 << "-grams:\n";
        std::vector<std::pair<std::vector<WordId>, const NgramModel::Entry*>> rows;
        rows.reserve(model.levels_[k].size());
        for (const auto& [key, e] : model.levels_[k]) rows.emplace_back(unpack_key(key), &e);
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [ids, e] : rows) {
            out << format_double(e->log10_prob) << '\t';
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i) out << ' ';
                out << model.vocab_[ids[i]];
            }
            out << '\t' << format_double(e->log10_backoff) << '\n';
        }
    }
    out << "\n\\end\\\n";
}

NgramModel read_model(std::istream& in) {
    auto expect_line = [&](std::string_view prefix) {
        std::string line;
        while (std::getline(in, line) && line.empty()) {
        }
        if (line.rfind(prefix, 0) != 0) {
            throw data_error("n-gram model: expected '" + std::string(prefix) + "', got '" + line + "'");
        }
        return line.substr(prefix.size());
    };
    if (expect_line("forge-kn ") != "1") throw data_error("n-gram model: unsupported version");
    NgramModel m;
    const auto lang = parse_lang(expect_line("lang "));
    if (!lang) throw data_error("n-gram model: bad lang");
    m.lang_ = *lang;
    m.order_ = std::stoi(expect_line("order "));
    m.discount_ = parse_double(expect_line("discount "));
    if (m.order_ < 1) throw data_error("n-gram model: bad order");
    expect_line("\\data\\");
    std::vector<std::size_t> sizes;
    for (int k = 1; k <= m.order_; ++k) {
        const auto rest = expect_line("ngram " + std::to_string(k) + "=");
        sizes.push_back(static_cast<std::size_t>(std::stoull(rest)));
    }
    m.levels_.resize(static_cast<std::size_t>(m.order_));
    for (int k = 1; k <= m.order_; ++k) {
        expect_line("\\" + std::to_string(k) + "-grams:");
        auto& level = m.levels_[static_cast<std::size_t>(k - 1)];
        for (std::size_t i = 0; i < sizes[static_cast<std::size_t>(k - 1)]; ++i) {
            std::string line;
            if (!std::getline(in, line)) throw data_error("n-gram model: truncated");
            const auto t1 = line.find('\t');
            const auto t2 = line.rfind('\t');
            if (t1 == std::string::npos || t1 == t2) throw data_error("n-gram model: bad row '" + line + "'");
            NgramModel::Entry e{parse_double(std::string_view(line).substr(0, t1)),
                                parse_double(std::string_view(line).substr(t2 + 1))};
            std::istringstream words(line.substr(t1 + 1, t2 - t1 - 1));
            std::vector<WordId> ids;
            std::string w;
            while (words >> w) {
                if (k == 1) {
                    const auto id = static_cast<WordId>(m.vocab_.size());
                    m.vocab_.push_back(w);
                    m.index_.emplace(w, id);
                    ids.push_back(id);
                } else {
                    auto it = m.index_.find(w);
                    if (it == m.index_.end()) throw data_error("n-gram model: word '" + w + "' missing from unigrams");
                    ids.push_back(it->second);
                }
            }
            if (ids.size() != static_cast<std::size_t>(k)) throw data_error("n-gram model: bad row '" + line + "'");
            level[pack_key(ids.data(), ids.size())] = e;
        }
    }
    expect_line("\\end\\");
    if (m.vocab_.size() < 3 || m.vocab_[kUnkId] != kUnk || m.vocab_[kBosId] != kBos || m.vocab_[kEosId] != kEos) {
        throw data_error("n-gram model: reserved words must lead the unigram list");
    }
    return m;
}

ModelBundle train_bundle(const std::vector<Document>& docs, const KnOptions& opts) {
    std::map<Lang, std::vector<Document>> by_lang;
    for (const auto& d : docs) by_lang[d.lang].push_back(d);
    ModelBundle bundle;
    for (const auto& [lang, group] : by_lang) bundle.emplace(lang, train_kn(group, opts));
    if (bundle.empty()) throw data_error("cannot train an n-gram model on an empty corpus");
    return bundle;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "forge-kn-bundle 1\nmodels " << bundle.size() << '\n';
    for (const auto& [lang, model] : bundle) write_model(out, model);
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open n-gram model " + path.string());
    std::string header;
    std::string models;
    std::getline(in, header);
    std::getline(in, models);
    if (header != "forge-kn-bundle 1" || models.rfind("models ", 0) != 0) {
        throw data_error("not an n-gram model bundle: " + path.string());
    }
    const auto count = std::stoul(models.substr(7));
    ModelBundle bundle;
    for (std::size_t i = 0; i < count; ++i) {
        auto m = read_model(in);
        const Lang lang = m.lang();
        bundle.emplace(lang, std::move(m));
    }
    return bundle;
}

PplScore perplexity(const NgramModel& model, const Document& doc) {
    double log_sum = 0.0;
    std::size_t n = 0;
    std::vector<WordId> context;
    for (const auto& sentence : split_sentences(doc.text, doc.lang)) {
        context.assign(1, kBosId);
        for (const auto& w : sentence) {
            const WordId id = model.word_id(w);
            log_sum += model.log_prob_ids(context.data(), context.size(), id);
            context.push_back(id);
            ++n;
        }
        log_sum += model.log_prob_ids(context.data(), context.size(), kEosId);
        ++n;
    }
    if (n == 0) throw data_error("token_count_zero: document '" + doc.id + "' has no words");
    return {doc.id, std::exp(-log_sum / static_cast<double>(n)), n};
}

PplScore perplexity(const ModelBundle& bundle, const Document& doc) {
    auto it = bundle.find(doc.lang);
    if (it == bundle.end()) {
        throw data_error("no n-gram model for lang '" + std::string(to_string(doc.lang)) + "'");
    }
    return perplexity(it->second, doc);
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<PplScore>& scores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "doc_id,ppl,token_count\n";
    for (const auto& s : scores) out << s.doc_id << ',' << format_double(s.ppl) << ',' << s.token_count << '\n';
}

std::vector<PplScore> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "doc_id,ppl,token_count") throw data_error(path.string() + ": bad scores header");
    std::vector<PplScore> scores;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c2 = line.rfind(',');
        const auto c1 = c2 == std::string::npos ? c2 : line.rfind(',', c2 - 1);
        if (c1 == std::string::npos) throw data_error(path.string() + ":" + std::to_string(line_no) + ": bad row");
        PplScore s;
        s.doc_id = line.substr(0, c1);
        s.ppl = parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1));
        s.token_count = std::stoull(line.substr(c2 + 1));
        scores.push_back(std::move(s));
    }
    return scores;
}

PplFilterResult ppl_filter(const std::vector<PplScore>& scores, PplThreshold mode) {
    if (!(mode.max_ppl > 0.0)) throw usage_error("perplexity threshold must be > 0");
    PplFilterResult r;
    if (scores.empty()) {
        r.warning = "no perplexity scores to filter";
        return r;
    }
    for (const auto& s : scores) {
        if (s.ppl <= mode.max_ppl) r.keep.insert(s.doc_id);
    }
    return r;
}

PplFilterResult ppl_filter(const std::vector<PplScore>& scores, PplPercentile mode) {
    if (!(mode.percent > 0.0 && mode.percent <= 100.0)) throw usage_error("percentile must lie in (0, 100]");
    PplFilterResult r;
    if (scores.empty()) {
        r.warning = "no perplexity scores to filter";
        return r;
    }
    std::vector<const PplScore*> order;
    order.reserve(scores.size());
    for (const auto& s : scores) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const PplScore* a, const PplScore* b) {
        return a->ppl != b->ppl ? a->ppl < b->ppl : a->doc_id < b->doc_id;
    });
    const auto count = static_cast<std::size_t>(std::floor(mode.percent / 100.0 * static_cast<double>(scores.size()) + 1e-9));
    if (count == 0) return r;
    const double cutoff = order[std::min(count, order.size()) - 1]->ppl;
    for (const auto* s : order) {
        if (s->ppl > cutoff) break;
        r.keep.insert(s->doc_id);
    }
    return r;
}

}  // namespace forge::ngram
