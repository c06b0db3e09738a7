#include "forge/mixture.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "forge/error.hpp"

namespace forge::mix {
namespace {

constexpr char kTokenMagic[4] = {'F', 'G', 'T', 'K'};
constexpr std::uint32_t kTokenVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw data_error("token file truncated");
    return v;
}

}  // namespace

MixtureSpec load_mixture_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open mixture spec " + path.string());
    MixtureSpec spec;
    try {
        const auto j = nlohmann::json::parse(in);
        spec.total_training_tokens = j.at("total_training_tokens").get<std::uint64_t>();
        for (const auto& e : j.at("datasets")) {
            MixtureEntry m;
            m.name = e.at("name").get<std::string>();
            m.num_tokens = e.at("num_tokens").get<std::uint64_t>();
            m.weight = e.at("weight").get<double>();
            m.epochs = e.at("epochs").get<double>();
            m.category = e.value("category", "");
            const auto lang = e.value("language", "en");
            if (lang == "English" || lang == "en") {
                m.language = Lang::en;
            } else if (lang == "Chinese" || lang == "zh") {
                m.language = Lang::zh;
            } else {
                throw usage_error("mixture spec: unknown language '" + lang + "'");
            }
            spec.entries.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw usage_error("bad mixture spec " + path.string() + ": " + e.what());
    }
    return spec;
}

void save_mixture_spec(const std::filesystem::path& path, const MixtureSpec& spec) {
    nlohmann::ordered_json j;
    j["total_training_tokens"] = spec.total_training_tokens;
    auto& rows = j["datasets"] = nlohmann::ordered_json::array();
    for (const auto& e : spec.entries) {
        rows.push_back({{"name", e.name},
                        {"num_tokens", e.num_tokens},
                        {"weight", e.weight},
                        {"epochs", e.epochs},
                        {"category", e.category},
                        {"language", e.language == Lang::zh ? "Chinese" : "English"}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

bool MixtureReport::ok() const {
    if (!weights_sum_to_one) return false;
    for (const auto& e : epochs) {
        if (!e.within_tolerance) return false;
    }
    return true;
}

MixtureReport validate_mixture(const MixtureSpec& spec, double tolerance, double weight_tolerance) {
    MixtureReport r;
    for (const auto& e : spec.entries) r.weight_sum += e.weight;
    r.weights_sum_to_one = std::abs(r.weight_sum - 1.0) <= weight_tolerance;
    {
        char buf[96];
        std::snprintf(buf, sizeof buf, "weight sum %.6f %s", r.weight_sum, r.weights_sum_to_one ? "ok" : "NOT 1");
        r.findings.push_back(buf);
    }
    const double total = static_cast<double>(spec.total_training_tokens);
    for (const auto& e : spec.entries) {
        if (e.num_tokens == 0) r.findings.push_back(e.name + ": num_tokens must be > 0");
        if (e.weight < 0.0) r.findings.push_back(e.name + ": weight must be >= 0");
        EpochCheck c;
        c.name = e.name;
        c.stated = e.epochs;
        c.implied = e.num_tokens > 0 ? e.weight * total / static_cast<double>(e.num_tokens) : 0.0;
        c.relative_deviation = e.epochs != 0.0 ? std::abs(c.implied - e.epochs) / e.epochs
                                               : (c.implied == 0.0 ? 0.0 : INFINITY);
        c.within_tolerance = c.relative_deviation <= tolerance;
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s: implied epochs %.4f vs stated %.4g (deviation %.1f%%)%s", e.name.c_str(),
                      c.implied, c.stated, 100.0 * c.relative_deviation, c.within_tolerance ? "" : " EXCEEDS TOLERANCE");
        r.findings.push_back(buf);
        r.epochs.push_back(std::move(c));
    }
    return r;
}

MixtureSampler::MixtureSampler(MixtureSpec spec, std::map<std::string, std::vector<TokenDoc>> datasets,
                               std::uint64_t seed)
    : spec_(std::move(spec)), rng_(seed) {
    double acc = 0.0;
    for (const auto& e : spec_.entries) {
        if (e.weight < 0.0) throw usage_error("mixture weight for '" + e.name + "' is negative");
        auto it = datasets.find(e.name);
        if (it == datasets.end()) {
            if (e.weight > 0.0) throw data_error("no dataset supplied for mixture entry '" + e.name + "'");
            sources_.emplace_back();
        } else {
            std::size_t tokens = 0;
            for (const auto& d : it->second) tokens += d.size();
            if (tokens == 0 && e.weight > 0.0) throw data_error("dataset '" + e.name + "' is empty but has positive weight");
            sources_.push_back(std::move(it->second));
        }
        acc += e.weight;
        cumulative_.push_back(acc);
    }
    if (!(acc > 0.0)) throw usage_error("mixture weights sum to zero");
    cursor_.assign(sources_.size(), 0);
}

std::size_t MixtureSampler::draw() {
    // 53 random bits give a uniform double in [0, 1).
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53 * cumulative_.back();
    for (std::size_t i = 0; i < cumulative_.size(); ++i) {
        if (u < cumulative_[i] && spec_.entries[i].weight > 0.0) return i;
    }
    for (std::size_t i = cumulative_.size(); i-- > 0;) {
        if (spec_.entries[i].weight > 0.0) return i;
    }
    return 0;
}

std::optional<SampledDocument> MixtureSampler::next() {
    if (emitted_ >= spec_.total_training_tokens) return std::nullopt;
    const std::size_t src = draw();
    auto& docs = sources_[src];
    // Skip empty documents; the source holds at least one token.
    const TokenDoc* doc = nullptr;
    do {
        doc = &docs[cursor_[src]];
        cursor_[src] = (cursor_[src] + 1) % docs.size();
    } while (doc->empty());
    SampledDocument out{src, *doc};
    const std::uint64_t room = spec_.total_training_tokens - emitted_;
    if (out.tokens.size() > room) out.tokens.resize(room);
    emitted_ += out.tokens.size();
    return out;
}

std::vector<SampledDocument> sample_stream(const MixtureSpec& spec,
                                           const std::map<std::string, std::vector<TokenDoc>>& datasets,
                                           std::uint64_t seed) {
    MixtureSampler sampler(spec, datasets, seed);
    std::vector<SampledDocument> out;
    while (auto d = sampler.next()) out.push_back(std::move(*d));
    return out;
}

SequencePacker::SequencePacker(std::size_t sequence_length, TokenId eos_id)
    : length_(sequence_length), eos_(eos_id) {
    if (sequence_length < 2) throw usage_error("sequence length must be >= 2");
    current_.reserve(sequence_length);
}

void SequencePacker::push(const TokenDoc& doc) {
    auto emit = [&](TokenId t) {
        current_.push_back(t);
        if (current_.size() == length_) {
            done_.push_back(std::move(current_));
            current_.clear();
            current_.reserve(length_);
        }
    };
    for (TokenId t : doc) emit(t);
    emit(eos_);
}

std::vector<TokenDoc> SequencePacker::take() { return std::exchange(done_, {}); }

std::vector<TokenDoc> pack_sequences(const std::vector<TokenDoc>& docs, std::size_t sequence_length, TokenId eos_id) {
    SequencePacker packer(sequence_length, eos_id);
    for (const auto& d : docs) packer.push(d);
    return packer.take();
}

PackedBatchPlan batch_plan(std::uint64_t micro_batch, std::uint64_t grad_accum, std::uint64_t ranks,
                           std::uint64_t sequence_length) {
    return {sequence_length, micro_batch * grad_accum * ranks};
}

void write_token_file(const std::filesystem::path& path, const TokenFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out.write(kTokenMagic, 4);
    put<std::uint32_t>(out, kTokenVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.sources.size()));
    for (const auto& s : file.sources) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    put<std::uint64_t>(out, file.docs.size());
    for (const auto& d : file.docs) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(d.source));
        put<std::uint64_t>(out, d.tokens.size());
        out.write(reinterpret_cast<const char*>(d.tokens.data()),
                  static_cast<std::streamsize>(d.tokens.size() * sizeof(TokenId)));
    }
}

TokenFile read_token_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open token file " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kTokenMagic, 4) != 0) throw data_error(path.string() + " is not a token file");
    if (get<std::uint32_t>(in) != kTokenVersion) throw data_error(path.string() + ": unsupported token file version");
    TokenFile file;
    const auto n_sources = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_sources; ++i) {
        std::string s(get<std::uint32_t>(in), '\0');
        if (!in.read(s.data(), static_cast<std::streamsize>(s.size()))) throw data_error("token file truncated");
        file.sources.push_back(std::move(s));
    }
    const auto n_docs = get<std::uint64_t>(in);
    file.docs.reserve(n_docs);
    for (std::uint64_t i = 0; i < n_docs; ++i) {
        SampledDocument d;
        d.source = get<std::uint32_t>(in);
        if (d.source >= file.sources.size() && !file.sources.empty()) throw data_error("token file: bad source index");
        d.tokens.resize(get<std::uint64_t>(in));
        if (!in.read(reinterpret_cast<char*>(d.tokens.data()), static_cast<std::streamsize>(d.tokens.size() * sizeof(TokenId)))) {
            throw data_error("token file truncated");
        }
        file.docs.push_back(std::move(d));
    }
    return file;
}

}  // namespace forge::mix
