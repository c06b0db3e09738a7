#include "forge/tokenizer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/utf8.hpp"

namespace forge::tok {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Byte pieces sit this far (in nats) below the least likely normal piece.
constexpr double kBytePenalty = 10.0;

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

std::u32string to_u32(std::string_view s) {
    std::u32string out;
    std::size_t pos = 0;
    while (pos < s.size()) out.push_back(utf8::decode_one(s, pos).value_or(0xFFFD));
    return out;
}

std::string to_utf8(const std::u32string& s) {
    std::string out;
    for (char32_t c : s) utf8::append(out, c);
    return out;
}

std::string_view kind_name(PieceKind k) {
    switch (k) {
        case PieceKind::normal: return "normal";
        case PieceKind::byte: return "byte";
        case PieceKind::control: return "control";
    }
    return "?";
}

PieceKind parse_kind(const std::string& s) {
    if (s == "normal") return PieceKind::normal;
    if (s == "byte") return PieceKind::byte;
    if (s == "control") return PieceKind::control;
    throw data_error("unknown piece kind '" + s + "'");
}

}  // namespace

std::string byte_piece_surface(std::uint8_t b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", static_cast<unsigned>(b));
    return buf;
}

std::vector<std::string_view> pretokenize(std::string_view text, bool digit_split) {
    std::vector<std::string_view> out;
    if (text.empty()) return out;
    if (!digit_split) {
        out.push_back(text);
        return out;
    }
    std::size_t run_start = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t at = pos;
        const auto cp = utf8::decode_one(text, pos);
        if (cp && unicode::is_decimal_digit(*cp)) {
            if (at > run_start) out.push_back(text.substr(run_start, at - run_start));
            out.push_back(text.substr(at, pos - at));
            run_start = pos;
        }
    }
    if (run_start < text.size()) out.push_back(text.substr(run_start));
    return out;
}

TokenizerModel::TokenizerModel(TokenizerSettings settings, std::vector<Piece> pieces)
    : settings_(settings), pieces_(std::move(pieces)) {
    if (pieces_.size() != settings_.vocab_size) {
        throw data_error("tokenizer: " + std::to_string(pieces_.size()) + " pieces but vocab_size " +
                         std::to_string(settings_.vocab_size));
    }
    build_index();
}

void TokenizerModel::build_index() {
    normal_index_.clear();
    std::fill(byte_ids_.begin(), byte_ids_.end(), -1);
    trie_.assign(1, TrieNode{});
    std::set<std::string> surfaces;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        const auto& p = pieces_[i];
        const auto id = static_cast<TokenId>(i) + kNumReserved;
        if (!surfaces.insert(p.surface).second) throw data_error("tokenizer: duplicate piece '" + p.surface + "'");
        if (p.kind == PieceKind::control) throw data_error("tokenizer: control pieces are implicit");
        if (p.kind == PieceKind::byte) {
            bool matched = false;
            for (int b = 0; b < 256; ++b) {
                if (p.surface == byte_piece_surface(static_cast<std::uint8_t>(b))) {
                    byte_ids_[static_cast<std::size_t>(b)] = id;
                    matched = true;
                    break;
                }
            }
            if (!matched) throw data_error("tokenizer: bad byte piece '" + p.surface + "'");
            continue;
        }
        if (!utf8::is_valid(p.surface)) throw data_error("tokenizer: piece is not valid UTF-8");
        const auto cps = to_u32(p.surface);
        if (cps.empty() || cps.size() > settings_.max_piece_chars) {
            throw data_error("tokenizer: piece '" + p.surface + "' violates the length bound");
        }
        normal_index_.emplace(p.surface, id);
        std::uint32_t node = 0;
        for (char32_t c : cps) {
            auto& next = trie_[node].next;
            auto it = std::lower_bound(next.begin(), next.end(), c,
                                       [](const auto& e, char32_t v) { return e.first < v; });
            if (it != next.end() && it->first == c) {
                node = it->second;
            } else {
                const auto child = static_cast<std::uint32_t>(trie_.size());
                next.insert(it, {c, child});
                trie_.emplace_back();
                node = child;
            }
        }
        trie_[node].id = id;
    }
    for (std::size_t b = 0; b < kNumBytePieces; ++b) {
        if (byte_ids_[b] < 0) throw data_error("tokenizer: byte piece " + byte_piece_surface(static_cast<std::uint8_t>(b)) + " missing");
    }
}

const Piece& TokenizerModel::piece(TokenId id) const {
    if (id < kNumReserved || static_cast<std::size_t>(id) >= id_count()) {
        throw data_error("token id " + std::to_string(id) + " has no piece");
    }
    return pieces_[static_cast<std::size_t>(id - kNumReserved)];
}

PieceKind TokenizerModel::kind(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_count()) throw data_error("token id " + std::to_string(id) + " out of range");
    if (id < kNumReserved) return PieceKind::control;
    return pieces_[static_cast<std::size_t>(id - kNumReserved)].kind;
}

TokenId TokenizerModel::normal_id(std::string_view surface) const {
    auto it = normal_index_.find(std::string(surface));
    return it == normal_index_.end() ? -1 : it->second;
}

TokenizerModel byte_level_model() {
    TokenizerSettings s;
    s.vocab_size = kNumBytePieces;
    std::vector<Piece> pieces;
    for (int b = 0; b < 256; ++b) {
        pieces.push_back({byte_piece_surface(static_cast<std::uint8_t>(b)), -std::log(256.0), PieceKind::byte});
    }
    return TokenizerModel(s, std::move(pieces));
}

std::vector<TokenId> encode_segment(const TokenizerModel& model, const std::u32string& cps, double* score) {
    const std::size_t n = cps.size();
    struct Best {
        double score = kNegInf;
        std::size_t tokens = 0;
        std::size_t len = 0;
        TokenId id = -1;  // -1: byte fallback for one character
    };
    std::vector<Best> best(n + 1);
    best[n].score = 0.0;
    auto consider = [](Best& cur, double s, std::size_t tokens, std::size_t len, TokenId id) {
        const bool better = s > cur.score ||
                            (s == cur.score && (tokens < cur.tokens || (tokens == cur.tokens && len > cur.len)));
        if (better) cur = {s, tokens, len, id};
    };
    std::string bytes;
    for (std::size_t i = n; i-- > 0;) {
        Best cur;
        bool has_char_piece = false;
        model.for_each_match(cps, i, [&](TokenId id, std::size_t len) {
            if (len == 1) has_char_piece = true;
            const Best& tail = best[i + len];
            if (tail.score == kNegInf) return;
            consider(cur, model.piece(id).log_prob + tail.score, tail.tokens + 1, len, id);
        });
        if (!has_char_piece) {
            bytes.clear();
            utf8::append(bytes, cps[i]);
            double s = 0.0;
            for (unsigned char b : bytes) s += model.piece(model.byte_id(b)).log_prob;
            consider(cur, s + best[i + 1].score, best[i + 1].tokens + bytes.size(), 1, -1);
        }
        best[i] = cur;
    }
    std::vector<TokenId> ids;
    for (std::size_t i = 0; i < n;) {
        const Best& b = best[i];
        if (b.id >= 0) {
            ids.push_back(b.id);
        } else {
            bytes.clear();
            utf8::append(bytes, cps[i]);
            for (unsigned char c : bytes) ids.push_back(model.byte_id(c));
        }
        i += b.len;
    }
    if (score) *score = best[0].score;
    return ids;
}

std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text) {
    std::vector<TokenId> ids;
    for (auto seg : pretokenize(text, model.settings().digit_split)) {
        auto part = encode_segment(model, to_u32(seg));
        ids.insert(ids.end(), part.begin(), part.end());
    }
    return ids;
}

std::string decode(const TokenizerModel& model, const std::vector<TokenId>& ids, std::size_t* replaced) {
    std::string out;
    std::string pending;
    std::size_t bad = 0;
    auto flush = [&] {
        if (pending.empty()) return;
        std::size_t n = 0;
        out += utf8::sanitize(pending, &n);
        bad += n;
        pending.clear();
    };
    for (TokenId id : ids) {
        switch (model.kind(id)) {
            case PieceKind::control:
                flush();
                break;
            case PieceKind::byte:
                for (int b = 0; b < 256; ++b) {
                    if (model.byte_id(static_cast<std::uint8_t>(b)) == id) {
                        pending.push_back(static_cast<char>(b));
                        break;
                    }
                }
                break;
            case PieceKind::normal:
                flush();
                out += model.piece(id).surface;
                break;
        }
    }
    flush();
    if (replaced) *replaced = bad;
    return out;
}

double compression_rate(const TokenizerModel& model, const std::vector<Document>& docs) {
    std::size_t tokens = 0;
    std::size_t chars = 0;
    for (const auto& d : docs) {
        tokens += encode(model, d.text).size();
        chars += utf8::char_count(d.text);
    }
    if (chars == 0) throw data_error("compression rate needs a corpus with at least one character");
    return static_cast<double>(tokens) / static_cast<double>(chars);
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Segment {
    std::u32string cps;
    double freq = 0.0;
};

struct Candidate {
    std::u32string cps;
    double log_prob = 0.0;
    bool required = false;
};

struct SubstringCount {
    double count = 0.0;
    std::uint32_t seg = 0;
    std::uint32_t offset = 0;
};

std::uint64_t fnv_extend(std::uint64_t h, char32_t c) {
    std::string bytes;
    utf8::append(bytes, c);
    return fnv1a64(bytes, h);
}

/// Builds a model over the current candidates so the lattice helpers can be
/// shared with encoding. Byte pieces come first, then candidates in order.
TokenizerModel lattice_model(const std::vector<Candidate>& cands, const TokenizerSettings& settings) {
    std::vector<Piece> pieces;
    pieces.reserve(kNumBytePieces + cands.size());
    for (int b = 0; b < 256; ++b) {
        pieces.push_back({byte_piece_surface(static_cast<std::uint8_t>(b)), 0.0, PieceKind::byte});
    }
    for (const auto& c : cands) pieces.push_back({to_utf8(c.cps), c.log_prob, PieceKind::normal});
    TokenizerSettings s = settings;
    s.vocab_size = pieces.size();
    return TokenizerModel(s, std::move(pieces));
}

std::size_t cand_index(TokenId id) { return static_cast<std::size_t>(id - kNumReserved) - kNumBytePieces; }

class UnigramTrainer {
public:
    UnigramTrainer(const std::vector<Document>& docs, const TokenizerSettings& settings, TrainTrace* trace)
        : settings_(settings), trace_(trace) {
        collect_segments(docs);
    }

    TokenizerModel run() {
        if (settings_.vocab_size <= kNumBytePieces) {
            throw usage_error("vocab_size must exceed the 256 byte pieces");
        }
        const std::size_t target = settings_.vocab_size - kNumBytePieces;
        select_required_chars();
        seed_candidates(target);
        if (required_count_ > target) {
            throw usage_error("vocab_size " + std::to_string(settings_.vocab_size) + " cannot hold the " +
                              std::to_string(required_count_) + " characters required by coverage");
        }
        if (cands_.size() < target) {
            throw data_error("vocab_size unreachable: only " + std::to_string(cands_.size() + kNumBytePieces) +
                             " candidate pieces for a requested " + std::to_string(settings_.vocab_size));
        }
        // Fixed score for characters outside coverage so successive E-steps
        // optimise the same objective.
        double min_lp = 0.0;
        for (const auto& c : cands_) min_lp = std::min(min_lp, c.log_prob);
        fallback_log_prob_ = min_lp - kBytePenalty;

        while (true) {
            if (trace_) trace_->em_log_likelihood.emplace_back();
            for (int it = 0; it < settings_.em_iterations; ++it) em_step();
            if (cands_.size() <= target) break;
            prune(std::max(target, static_cast<std::size_t>(settings_.shrink_factor * static_cast<double>(cands_.size()))));
        }
        return finalize();
    }

private:
    void collect_segments(const std::vector<Document>& docs) {
        std::map<std::string, double> counts;
        for (const auto& d : docs) {
            for (auto seg : pretokenize(d.text, settings_.digit_split)) counts[std::string(seg)] += 1.0;
        }
        if (counts.empty()) throw data_error("cannot train a tokenizer on an empty corpus");
        segments_.reserve(counts.size());
        for (const auto& [s, f] : counts) segments_.push_back({to_u32(s), f});
    }

    void select_required_chars() {
        std::map<char32_t, double> freq;
        double total = 0.0;
        for (const auto& s : segments_) {
            for (char32_t c : s.cps) freq[c] += s.freq;
            total += s.freq * static_cast<double>(s.cps.size());
        }
        std::vector<std::pair<char32_t, double>> order(freq.begin(), freq.end());
        std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        double covered = 0.0;
        for (const auto& [c, f] : order) {
            if (covered / total >= settings_.coverage) break;
            required_.emplace(c, f);
            covered += f;
        }
        required_count_ = required_.size();
        if (trace_) trace_->required_chars = required_count_;
    }

    bool allowed(char32_t c) const { return required_.count(c) != 0; }

    void seed_candidates(std::size_t target) {
        struct Scored {
            double score;
            std::uint64_t hash;
            std::uint32_t seg;
            std::uint32_t offset;
            std::uint32_t len;
            double count;
        };
        std::vector<Scored> scored;
        std::vector<std::vector<std::uint64_t>> hashes(segments_.size());
        std::vector<std::vector<char>> alive(segments_.size());
        for (std::size_t s = 0; s < segments_.size(); ++s) {
            const auto& cps = segments_[s].cps;
            hashes[s].resize(cps.size());
            alive[s].resize(cps.size());
            for (std::size_t p = 0; p < cps.size(); ++p) {
                alive[s][p] = allowed(cps[p]) && required_.at(cps[p]) >= 2.0;
                hashes[s][p] = fnv_extend(kFnvOffset, cps[p]);
            }
        }
        for (std::size_t len = 2; len <= settings_.max_piece_chars; ++len) {
            std::unordered_map<std::uint64_t, SubstringCount> level;
            bool any = false;
            for (std::size_t s = 0; s < segments_.size(); ++s) {
                const auto& cps = segments_[s].cps;
                for (std::size_t p = 0; p + len <= cps.size(); ++p) {
                    if (!alive[s][p]) continue;
                    const char32_t last = cps[p + len - 1];
                    if (!allowed(last)) {
                        alive[s][p] = 0;
                        continue;
                    }
                    hashes[s][p] = fnv_extend(hashes[s][p], last);
                    auto [it, inserted] = level.try_emplace(hashes[s][p]);
                    if (inserted) it->second = {0.0, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(p)};
                    it->second.count += segments_[s].freq;
                    any = true;
                }
                for (std::size_t p = cps.size() + 1 > len ? cps.size() + 1 - len : 0; p < cps.size(); ++p) alive[s][p] = 0;
            }
            if (!any) break;
            for (std::size_t s = 0; s < segments_.size(); ++s) {
                for (std::size_t p = 0; p < alive[s].size(); ++p) {
                    if (alive[s][p]) alive[s][p] = level.at(hashes[s][p]).count >= 2.0;
                }
            }
            for (const auto& [h, sc] : level) {
                if (sc.count < 2.0) continue;
                scored.push_back({sc.count * static_cast<double>(len), h, sc.seg, sc.offset,
                                  static_cast<std::uint32_t>(len), sc.count});
            }
        }
        const std::size_t budget = settings_.seed_factor * settings_.vocab_size;
        const std::size_t keep = budget > required_.size() ? budget - required_.size() : 0;
        auto better = [](const Scored& a, const Scored& b) {
            return a.score != b.score ? a.score > b.score : a.hash < b.hash;
        };
        if (scored.size() > keep) {
            std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
            scored.resize(keep);
        }
        std::sort(scored.begin(), scored.end(), better);

        std::set<std::string> byte_surfaces;
        for (int b = 0; b < 256; ++b) byte_surfaces.insert(byte_piece_surface(static_cast<std::uint8_t>(b)));

        double total = 0.0;
        for (const auto& [c, f] : required_) total += f;
        for (const auto& s : scored) total += s.count;
        for (const auto& [c, f] : required_) {
            if (byte_surfaces.count(utf8::encode(c))) continue;
            cands_.push_back({std::u32string(1, c), std::log(f / total), true});
        }
        for (const auto& s : scored) {
            std::u32string cps = segments_[s.seg].cps.substr(s.offset, s.len);
            if (byte_surfaces.count(to_utf8(cps))) continue;
            cands_.push_back({std::move(cps), std::log(s.count / total), false});
        }
        (void)target;
        if (trace_) trace_->seed_pieces = cands_.size();
    }

    /// One E-step plus M-step. Records the corpus log-likelihood under the
    /// parameters the E-step used.
    void em_step() {
        const TokenizerModel model = lattice_model(cands_, settings_);
        std::vector<double> expected(cands_.size(), 0.0);
        double log_likelihood = 0.0;
        std::vector<double> alpha;
        std::vector<double> beta;
        std::vector<char> has_char;
        for (const auto& seg : segments_) {
            const auto& cps = seg.cps;
            const std::size_t n = cps.size();
            has_char.assign(n, 0);
            alpha.assign(n + 1, kNegInf);
            beta.assign(n + 1, kNegInf);
            alpha[0] = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                model.for_each_match(cps, i, [&](TokenId id, std::size_t len) {
                    if (len == 1) has_char[i] = 1;
                    alpha[i + len] = log_add(alpha[i + len], alpha[i] + model.piece(id).log_prob);
                });
                if (!has_char[i]) alpha[i + 1] = log_add(alpha[i + 1], alpha[i] + fallback_log_prob_);
            }
            beta[n] = 0.0;
            for (std::size_t i = n; i-- > 0;) {
                double b = kNegInf;
                model.for_each_match(cps, i, [&](TokenId id, std::size_t len) {
                    b = log_add(b, model.piece(id).log_prob + beta[i + len]);
                });
                if (!has_char[i]) b = log_add(b, fallback_log_prob_ + beta[i + 1]);
                beta[i] = b;
            }
            const double z = alpha[n];
            log_likelihood += seg.freq * z;
            for (std::size_t i = 0; i < n; ++i) {
                model.for_each_match(cps, i, [&](TokenId id, std::size_t len) {
                    expected[cand_index(id)] +=
                        seg.freq * std::exp(alpha[i] + model.piece(id).log_prob + beta[i + len] - z);
                });
            }
        }
        if (trace_) trace_->em_log_likelihood.back().push_back(log_likelihood);

        double total = 0.0;
        for (double e : expected) total += e;
        for (std::size_t i = 0; i < cands_.size(); ++i) {
            const double e = std::max(expected[i], std::numeric_limits<double>::min());
            cands_[i].log_prob = std::log(e / total);
        }
    }

    void prune(std::size_t new_size) {
        const TokenizerModel model = lattice_model(cands_, settings_);
        const std::size_t n = cands_.size();

        std::vector<char> self_best(n, 1);
        std::vector<std::vector<std::size_t>> alternatives(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (cands_[i].cps.size() < 2) continue;
            // Best segmentation of the piece without the piece itself.
            const std::u32string& cps = cands_[i].cps;
            const TokenId self = static_cast<TokenId>(i + kNumBytePieces) + kNumReserved;
            const std::size_t m = cps.size();
            std::vector<double> best(m + 1, kNegInf);
            std::vector<std::pair<std::size_t, TokenId>> back(m + 1, {0, -1});
            best[0] = 0.0;
            for (std::size_t p = 0; p < m; ++p) {
                if (best[p] == kNegInf) continue;
                model.for_each_match(cps, p, [&](TokenId id, std::size_t len) {
                    if (id == self) return;
                    const double s = best[p] + model.piece(id).log_prob;
                    if (s > best[p + len]) {
                        best[p + len] = s;
                        back[p + len] = {p, id};
                    }
                });
            }
            if (best[m] == kNegInf) continue;
            if (best[m] > cands_[i].log_prob) self_best[i] = 0;
            for (std::size_t p = m; p > 0; p = back[p].first) alternatives[i].push_back(cand_index(back[p].second));
        }

        std::vector<double> vfreq(n, 0.0);
        std::vector<double> seg_mass(n, 0.0);
        double vsum = 0.0;
        double seg_total = 0.0;
        std::vector<char> touched(n, 0);
        for (const auto& seg : segments_) {
            seg_total += seg.freq;
            const auto ids = encode_segment(model, seg.cps);
            std::fill(touched.begin(), touched.end(), 0);
            for (TokenId id : ids) {
                if (model.kind(id) != PieceKind::normal) continue;
                const auto c = cand_index(id);
                vfreq[c] += seg.freq;
                vsum += seg.freq;
                if (!touched[c]) {
                    touched[c] = 1;
                    seg_mass[c] += seg.freq;
                }
            }
        }

        std::vector<char> keep(n, 0);
        std::size_t kept = 0;
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t i = 0; i < n; ++i) {
            if (cands_[i].required || (alternatives[i].empty() && vfreq[i] > 0.0 && self_best[i])) {
                keep[i] = 1;
                ++kept;
                continue;
            }
            if (vfreq[i] == 0.0 || !self_best[i]) continue;
            const double share = seg_mass[i] / seg_total;
            const double logprob_sp = std::log(vfreq[i]) - std::log(vsum);
            const double logsum_alt =
                std::log(vsum + vfreq[i] * static_cast<double>(alternatives[i].size() - 1));
            double logprob_alt = 0.0;
            for (auto a : alternatives[i]) logprob_alt += std::log(vfreq[a] + vfreq[i]) - logsum_alt;
            ranked.emplace_back(share * (logprob_sp - logprob_alt), i);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [loss, i] : ranked) {
            if (kept >= new_size) break;
            keep[i] = 1;
            ++kept;
        }
        if (kept < new_size) {
            // Refill from the unused pieces, most probable first.
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i) {
                if (!keep[i]) rest.push_back(i);
            }
            std::stable_sort(rest.begin(), rest.end(),
                             [&](std::size_t a, std::size_t b) { return cands_[a].log_prob > cands_[b].log_prob; });
            for (auto i : rest) {
                if (kept >= new_size) break;
                keep[i] = 1;
                ++kept;
            }
        }
        std::vector<Candidate> next;
        next.reserve(kept);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (keep[i]) {
                total += std::exp(cands_[i].log_prob);
                next.push_back(std::move(cands_[i]));
            }
        }
        for (auto& c : next) c.log_prob -= std::log(total);
        cands_ = std::move(next);
    }

    TokenizerModel finalize() {
        std::vector<std::pair<std::string, double>> normals;
        normals.reserve(cands_.size());
        double min_lp = 0.0;
        for (const auto& c : cands_) {
            normals.emplace_back(to_utf8(c.cps), c.log_prob);
            min_lp = std::min(min_lp, c.log_prob);
        }
        const double byte_lp = min_lp - kBytePenalty;
        double z = 256.0 * std::exp(byte_lp);
        for (const auto& [s, lp] : normals) z += std::exp(lp);
        const double log_z = std::log(z);
        std::sort(normals.begin(), normals.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        std::vector<Piece> pieces;
        pieces.reserve(settings_.vocab_size);
        for (int b = 0; b < 256; ++b) {
            pieces.push_back({byte_piece_surface(static_cast<std::uint8_t>(b)), byte_lp - log_z, PieceKind::byte});
        }
        for (auto& [s, lp] : normals) pieces.push_back({std::move(s), lp - log_z, PieceKind::normal});
        return TokenizerModel(settings_, std::move(pieces));
    }

    TokenizerSettings settings_;
    TrainTrace* trace_;
    std::vector<Segment> segments_;
    std::map<char32_t, double> required_;
    std::size_t required_count_ = 0;
    std::vector<Candidate> cands_;
    double fallback_log_prob_ = 0.0;
};

}  // namespace

TokenizerModel train_unigram(const std::vector<Document>& docs, const TokenizerSettings& settings, TrainTrace* trace) {
    if (!(settings.coverage > 0.0 && settings.coverage <= 1.0)) throw usage_error("coverage must lie in (0, 1]");
    if (settings.max_piece_chars < 1) throw usage_error("max_piece_chars must be >= 1");
    if (settings.em_iterations < 1) throw usage_error("em_iterations must be >= 1");
    if (!(settings.shrink_factor > 0.0 && settings.shrink_factor < 1.0)) throw usage_error("shrink_factor must lie in (0, 1)");
    return UnigramTrainer(docs, settings, trace).run();
}

// ---------------------------------------------------------------------------
// Model file

std::string model_to_string(const TokenizerModel& model) {
    using nlohmann::ordered_json;
    const auto& s = model.settings();
    ordered_json j;
    j["format"] = "forge-unigram";
    j["version"] = 1;
    j["settings"] = {{"vocab_size", s.vocab_size},       {"coverage", s.coverage},
                     {"max_piece_chars", s.max_piece_chars}, {"digit_split", s.digit_split},
                     {"seed_factor", s.seed_factor},     {"em_iterations", s.em_iterations},
                     {"shrink_factor", s.shrink_factor}};
    j["reserved"] = {{"unk", kUnkId}, {"bos", kBosId}, {"eos", kEosId}};
    auto& pieces = j["pieces"] = ordered_json::array();
    for (const auto& p : model.pieces()) {
        pieces.push_back({{"surface", p.surface}, {"log_prob", p.log_prob}, {"kind", kind_name(p.kind)}});
    }
    return j.dump(1) + "\n";
}

TokenizerModel model_from_string(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format") != "forge-unigram" || j.at("version") != 1) throw data_error("not a forge tokenizer model");
        const auto& js = j.at("settings");
        TokenizerSettings s;
        s.vocab_size = js.at("vocab_size").get<std::size_t>();
        s.coverage = js.at("coverage").get<double>();
        s.max_piece_chars = js.at("max_piece_chars").get<std::size_t>();
        s.digit_split = js.at("digit_split").get<bool>();
        s.seed_factor = js.value("seed_factor", s.seed_factor);
        s.em_iterations = js.value("em_iterations", s.em_iterations);
        s.shrink_factor = js.value("shrink_factor", s.shrink_factor);
        std::vector<Piece> pieces;
        for (const auto& jp : j.at("pieces")) {
            pieces.push_back({jp.at("surface").get<std::string>(), jp.at("log_prob").get<double>(),
                              parse_kind(jp.at("kind").get<std::string>())});
        }
        return TokenizerModel(s, std::move(pieces));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad tokenizer model: ") + e.what());
    }
}

TokenizerSettings load_settings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open tokenizer settings " + path.string());
    TokenizerSettings s;
    try {
        const auto j = nlohmann::json::parse(in);
        s.vocab_size = j.value("vocab_size", s.vocab_size);
        s.coverage = j.value("coverage", s.coverage);
        s.max_piece_chars = j.value("max_piece_chars", s.max_piece_chars);
        s.digit_split = j.value("digit_split", s.digit_split);
        s.seed_factor = j.value("seed_factor", s.seed_factor);
        s.em_iterations = j.value("em_iterations", s.em_iterations);
        s.shrink_factor = j.value("shrink_factor", s.shrink_factor);
    } catch (const nlohmann::json::exception& e) {
        throw usage_error("bad tokenizer settings " + path.string() + ": " + e.what());
    }
    return s;
}

void save_model(const std::filesystem::path& path, const TokenizerModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << model_to_string(model);
}

TokenizerModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open tokenizer model " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_string(ss.str());
}

}  // namespace forge::tok
