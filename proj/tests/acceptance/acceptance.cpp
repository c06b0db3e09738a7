// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: acceptance [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/dedup.hpp"
#include "forge/error.hpp"
#include "forge/mixture.hpp"
#include "forge/model.hpp"
#include "forge/ngram.hpp"
#include "forge/pipeline.hpp"
#include "forge/tokenizer.hpp"
#include "forge/trainer.hpp"
#include "forge/utf8.hpp"
#include "support/dedup_oracle.hpp"
#include "support/kn_oracle.hpp"
#include "support/reference_model.hpp"
#include "support/temp_dir.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<Document> fixture_docs() {
    std::vector<Document> docs;
    auto reader = load_documents(testing::fixture_corpus(), OnRecordError::skip);
    while (auto d = reader.next()) docs.push_back(std::move(*d));
    return docs;
}

// ---------------------------------------------------------------------------

Outcome schedule() {
    const auto cfg = train::TrainConfig::xmodel();
    const double e0 = std::abs(train::lr_at(0, cfg));
    const double e1 = std::abs(train::lr_at(2000, cfg) - 6e-4);
    const double e2 = std::abs(train::lr_at(600000, cfg) - 6e-5);
    // Warmup branch evaluated at the boundary equals the cosine branch there.
    const double warm_limit = cfg.lr_max * 2000.0 / 2000.0;
    const double e3 = std::abs(warm_limit - train::lr_at(2000, cfg));
    const double step_in = std::abs(train::lr_at(2001, cfg) - train::lr_at(2000, cfg));
    const bool pass = e0 <= 1e-12 && e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12 && step_in < 1e-9;
    return {pass, fmt("lr(0)=%g lr(2000)=%.12g lr(600000)=%.12g; jump at warmup %.3g", train::lr_at(0, cfg),
                      train::lr_at(2000, cfg), train::lr_at(600000, cfg), step_in)};
}

Outcome token_arithmetic() {
    const auto cfg = train::TrainConfig::xmodel();
    const auto per_step = train::tokens_seen(1, cfg, 4096);
    const auto total = train::tokens_seen(600000, cfg, 4096);
    const auto plan = mix::batch_plan(4, 30, 7, 4096);
    const bool pass = cfg.sequences_per_step() == 840 && per_step == 3440640 && total == 2064384000000ULL &&
                      plan.tokens_per_step() == per_step;
    return {pass, fmt("%llu sequences/step, %llu tokens/step, %llu tokens total",
                      static_cast<unsigned long long>(cfg.sequences_per_step()),
                      static_cast<unsigned long long>(per_step), static_cast<unsigned long long>(total))};
}

Outcome mixture_table() {
    const auto spec = mix::load_mixture_spec(testing::source_dir() / "data" / "xmodel_mixture.json");
    const auto r = mix::validate_mixture(spec, 0.25);
    std::string worst;
    double worst_dev = 0.0;
    std::size_t bad = 0;
    double wiki = 0.0;
    for (const auto& e : r.epochs) {
        if (!e.within_tolerance) ++bad;
        if (e.relative_deviation > worst_dev) {
            worst_dev = e.relative_deviation;
            worst = fmt("%s implied %.3f vs stated %g", e.name.c_str(), e.implied, e.stated);
        }
        if (e.name == "Wikipedia") wiki = e.implied;
    }
    const bool pass = spec.entries.size() == 18 && r.weights_sum_to_one && bad == 0;
    return {pass, fmt("weight sum %.12f, Wikipedia %.2f vs 3; %zu of 18 rows outside 25%% (worst: %s, %.0f%%)",
                      r.weight_sum, wiki, bad, worst.c_str(), 100.0 * worst_dev)};
}

Outcome gradient_check() {
    const auto cfg = nn::ModelConfig::toy();
    auto params = nn::init_params(cfg, 2024);
    std::mt19937_64 rng(7);
    std::vector<nn::TokenId> ids(16);
    for (auto& id : ids) id = static_cast<nn::TokenId>(rng() % cfg.vocab_size);
    std::vector<nn::TokenId> targets(ids.begin() + 1, ids.end());
    targets.push_back(static_cast<nn::TokenId>(rng() % cfg.vocab_size));
    const auto res = nn::backward(params, ids, targets);
    auto refs = params.tensors();
    const auto grads = res.grads.tensors();
    const double h = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < refs.size(); ++t) {
        for (int s = 0; s < 12; ++s) {
            auto& data = refs[t].tensor->data;
            std::size_t idx = rng() % data.size();
            if (refs[t].name == "embedding") idx = static_cast<std::size_t>(ids[rng() % ids.size()]) * cfg.hidden_size + rng() % cfg.hidden_size;
            const double orig = data[idx];
            data[idx] = orig + h;
            const double up = nn::lm_loss(nn::forward(params, ids), targets);
            data[idx] = orig - h;
            const double down = nn::lm_loss(nn::forward(params, ids), targets);
            data[idx] = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grads[t].tensor->data[idx];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
            ++checked;
        }
    }
    return {checked >= 200 && worst <= 1e-4, fmt("%zu parameters, max relative error %.3g", checked, worst)};
}

Outcome architecture() {
    auto cfg = nn::ModelConfig::toy();
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist(0.0, 0.3);
    auto rand_tensor = [&](std::vector<std::size_t> shape) {
        nn::Tensor t(std::move(shape));
        for (auto& x : t.data) x = dist(rng);
        return t;
    };

    // Multi-head case against the reference.
    auto mha = cfg;
    mha.n_kv_heads = mha.n_heads;
    nn::LayerParams layer;
    layer.wq = rand_tensor({64, 64});
    layer.wk = rand_tensor({64, 64});
    layer.wv = rand_tensor({64, 64});
    layer.wo = rand_tensor({64, 64});
    nn::Tensor x({16, 64});
    for (auto& v : x.data) v = dist(rng);
    const auto got = nn::gqa_attention(x, layer, mha);
    const auto want = testing::ref_attention(testing::to_rows(x), layer, mha);
    double mha_err = 0.0;
    for (std::size_t t = 0; t < 16; ++t) {
        for (std::size_t i = 0; i < 64; ++i) mha_err = std::max(mha_err, std::abs(got.at(t, i) - want[t][i]));
    }

    double rope_err = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> q(16), k(16);
        for (auto& v : q) v = dist(rng);
        for (auto& v : k) v = dist(rng);
        const std::size_t m = rng() % 1000, n = rng() % 1000, s = rng() % 3000;
        auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
            double r = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) r += a[i] * b[i];
            return r;
        };
        rope_err = std::max(rope_err, std::abs(dot(nn::rope(q, m, 10000.0), nn::rope(k, n, 10000.0)) -
                                               dot(nn::rope(q, m + s, 10000.0), nn::rope(k, n + s, 10000.0))));
    }

    const auto params = nn::init_params(cfg, 3);
    std::vector<nn::TokenId> ids(40);
    for (auto& id : ids) id = static_cast<nn::TokenId>(rng() % cfg.vocab_size);
    const auto logits = nn::forward(params, ids);
    bool causal = true;
    for (std::size_t t = 0; t + 1 < ids.size(); t += 7) {
        auto edited = ids;
        for (std::size_t u = t + 1; u < ids.size(); ++u) edited[u] = (edited[u] + 17) % static_cast<nn::TokenId>(cfg.vocab_size);
        const auto other = nn::forward(params, edited);
        for (std::size_t r = 0; r <= t; ++r) {
            for (std::size_t v = 0; v < cfg.vocab_size; ++v) causal = causal && other.at(r, v) == logits.at(r, v);
        }
    }

    nn::Tensor uniform({8, cfg.vocab_size});
    std::fill(uniform.data.begin(), uniform.data.end(), 37.5);
    const double loss_err = std::abs(nn::lm_loss(uniform, std::vector<nn::TokenId>{0, 5, 9, 100, 511, 3, 3, 42}) -
                                     std::log(static_cast<double>(cfg.vocab_size)));

    const bool pass = mha_err <= 1e-10 && rope_err <= 1e-10 && causal && loss_err <= 1e-12;
    return {pass, fmt("MHA error %.2g, RoPE shift error %.2g, causality %s, uniform-loss error %.2g", mha_err,
                      rope_err, causal ? "exact" : "VIOLATED", loss_err)};
}

Outcome overfit() {
    std::string text, held_out;
    for (const auto& d : fixture_docs()) {
        if (d.lang != Lang::en || d.text.size() < 2048) continue;
        if (text.empty()) {
            text = d.text.substr(0, 2048);
        } else {
            held_out = d.text.substr(0, 2048);
            break;
        }
    }
    const auto tokenizer = tok::byte_level_model();
    const auto ids = tok::encode(tokenizer, text);
    const std::size_t L = 129;
    const auto seqs = mix::pack_sequences(std::vector<mix::TokenDoc>(40, ids), L, tok::kEosId);
    const auto val = mix::pack_sequences({tok::encode(tokenizer, held_out)}, L, tok::kEosId);

    auto mcfg = nn::ModelConfig::toy();
    mcfg.vocab_size = tokenizer.id_count();
    train::TrainConfig cfg;
    cfg.lr_max = 5e-3;
    cfg.lr_min = 5e-4;
    cfg.warmup_steps = 100;
    cfg.total_steps = 2000;
    cfg.micro_batch = 4;
    cfg.grad_accum = 1;
    cfg.sequence_length = L;
    cfg.log_interval = 100;
    const auto res = train::train(nn::init_params(mcfg, 1), cfg, seqs, val);
    // Every offset of the repeated text appears within the first copies.
    const std::vector<train::Sequence> probe(seqs.begin(), seqs.begin() + 40);
    const double train_eval = train::validate(res.params, probe);
    const double val_loss = train::validate(res.params, val);
    return {train_eval < 0.1 && val_loss > 1.0,
            fmt("%zu-byte text, 2000 steps: loss on the text %.4f (last logged %.4f), held-out loss %.3f",
                text.size(), train_eval, res.log.back().train_loss, val_loss)};
}

double brute_best(const tok::TokenizerModel& m, const std::u32string& s, std::size_t i) {
    if (i == s.size()) return 0.0;
    double best = -INFINITY;
    bool char_piece = false;
    for (std::size_t len = 1; i + len <= s.size(); ++len) {
        std::string surface;
        for (std::size_t k = i; k < i + len; ++k) utf8::append(surface, s[k]);
        const auto id = m.normal_id(surface);
        if (id < 0) continue;
        if (len == 1) char_piece = true;
        best = std::max(best, m.piece(id).log_prob + brute_best(m, s, i + len));
    }
    if (!char_piece) {
        std::string bytes;
        utf8::append(bytes, s[i]);
        double lp = 0.0;
        for (unsigned char b : bytes) lp += m.piece(m.byte_id(b)).log_prob;
        best = std::max(best, lp + brute_best(m, s, i + 1));
    }
    return best;
}

tok::TokenizerModel toy_vocab(const std::vector<std::pair<std::string, double>>& normals) {
    std::vector<tok::Piece> pieces;
    for (int b = 0; b < 256; ++b) pieces.push_back({tok::byte_piece_surface(static_cast<std::uint8_t>(b)), -11.0, tok::PieceKind::byte});
    for (const auto& [s, lp] : normals) pieces.push_back({s, lp, tok::PieceKind::normal});
    tok::TokenizerSettings st;
    st.vocab_size = pieces.size();
    return tok::TokenizerModel(st, pieces);
}

Outcome tokenizer_properties() {
    // Exhaustive Viterbi check over every string of length <= 10.
    const std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> vocabs = {
        {"abc", {{"a", -1.9}, {"b", -2.3}, {"c", -2.9}, {"ab", -3.0}, {"bc", -4.1}, {"ca", -4.4}, {"abc", -5.2}, {"bca", -7.5}}},
        {"abx", {{"a", -1.2}, {"b", -1.8}, {"ab", -2.2}, {"ba", -3.5}, {"bb", -2.9}, {"xa", -6.0}, {"aab", -4.0}}},
    };
    std::size_t strings = 0, mismatches = 0;
    for (const auto& [alphabet, normals] : vocabs) {
        const auto m = toy_vocab(normals);
        std::u32string s;
        std::function<void()> rec = [&] {
            if (!s.empty()) {
                double score = 0.0;
                tok::encode_segment(m, s, &score);
                if (std::abs(score - brute_best(m, s, 0)) > 1e-12 * std::max(1.0, std::abs(score))) ++mismatches;
                ++strings;
            }
            if (s.size() == 10) return;
            for (char c : alphabet) {
                s.push_back(static_cast<char32_t>(c));
                rec();
                s.pop_back();
            }
        };
        rec();
    }

    std::vector<Document> docs;
    for (const auto& d : fixture_docs()) {
        docs.push_back(d);
        if (docs.size() == 300) break;
    }
    tok::TokenizerSettings settings;
    settings.vocab_size = 800;
    const auto model = tok::train_unigram(docs, settings);
    std::mt19937_64 rng(99);
    const std::vector<std::pair<char32_t, char32_t>> ranges = {
        {0x20, 0x7e}, {0x30, 0x39}, {0xa0, 0x24f}, {0x370, 0x4ff}, {0x4e00, 0x9fff}, {0x3000, 0x303f}, {0x1f300, 0x1f64f}};
    std::size_t round_trip_failures = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string text;
        const int n = static_cast<int>(rng() % 48);
        for (int k = 0; k < n; ++k) {
            const auto& [lo, hi] = ranges[rng() % ranges.size()];
            utf8::append(text, lo + static_cast<char32_t>(rng() % (hi - lo + 1)));
        }
        if (tok::decode(model, tok::encode(model, text)) != text) ++round_trip_failures;
    }
    std::size_t longest = 0;
    double z = 0.0;
    for (const auto& p : model.pieces()) {
        z += std::exp(p.log_prob);
        if (p.kind == tok::PieceKind::normal) longest = std::max(longest, utf8::char_count(p.surface));
    }
    const auto digits = tok::encode(model, "2024").size();
    const bool pass = mismatches == 0 && round_trip_failures == 0 && digits == 4 && longest <= 16 && std::abs(z - 1.0) <= 1e-6;
    return {pass, fmt("viterbi %zu/%zu strings agree; %zu round-trip failures in 10000; \"2024\" -> %zu tokens; "
                      "longest piece %zu chars; probability mass %.9f",
                      strings - mismatches, strings, round_trip_failures, digits, longest, z)};
}

Outcome dedup_oracle() {
    std::mt19937_64 rng(5);
    std::vector<Document> docs;
    for (const auto& d : fixture_docs()) {
        if (docs.size() == 700) break;
        docs.push_back(d);
    }
    // Plant near-duplicates: one replaced word or an appended word.
    const std::size_t base_count = docs.size();
    for (int i = 0; i < 60; ++i) {
        Document copy = docs[rng() % base_count];
        if (copy.lang != Lang::en) {
            --i;
            continue;
        }
        copy.id = "planted-" + std::to_string(i);
        if (i % 2 == 0) {
            copy.text += " indeed";
        } else {
            const auto pos = copy.text.find(' ', copy.text.size() / 2);
            if (pos != std::string::npos) copy.text.insert(pos, " also");
        }
        docs.push_back(std::move(copy));
    }
    const dedup::BucketingConfig cfg{4, 3};
    const auto res = dedup::dedup(docs, cfg);
    std::set<std::string> kept;
    for (const auto& d : res.kept) kept.insert(d.id);
    std::vector<dedup::Fingerprint> fps;
    for (const auto& d : docs) fps.push_back(dedup::simhash(d));
    const auto expected = testing::exhaustive_kept(fps, cfg.hamming_threshold);

    // Band recall on random fingerprints with planted close pairs.
    std::vector<dedup::Fingerprint> rand_fps;
    for (int i = 0; i < 9000; ++i) rand_fps.push_back({"r" + std::to_string(i), rng()});
    std::vector<std::pair<std::size_t, std::size_t>> planted;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t base = rng() % 9000;
        std::uint64_t bits = rand_fps[base].bits;
        std::set<int> flips;
        const int k = static_cast<int>(rng() % 4);
        while (static_cast<int>(flips.size()) < k) flips.insert(static_cast<int>(rng() % 64));
        for (int b : flips) bits ^= 1ULL << b;
        planted.emplace_back(base, rand_fps.size());
        rand_fps.push_back({"p" + std::to_string(i), bits});
    }
    const auto cands = dedup::bucket_candidates(rand_fps, cfg);
    std::size_t misses = 0;
    auto all_close = testing::all_close_pairs(rand_fps, 3);
    for (const auto& [a, b] : all_close) {
        if (!std::binary_search(cands.begin(), cands.end(), dedup::CandidatePair{a, b})) ++misses;
    }
    std::size_t planted_misses = 0;
    for (const auto& [a, b] : planted) {
        if (!std::binary_search(cands.begin(), cands.end(), dedup::CandidatePair{std::min(a, b), std::max(a, b)})) ++planted_misses;
    }
    const bool pass = kept == expected && misses == 0 && planted_misses == 0;
    return {pass, fmt("%zu docs: bucketed keeps %zu, exhaustive keeps %zu, sets %s; recall: %zu close pairs, %zu misses",
                      docs.size(), kept.size(), expected.size(), kept == expected ? "identical" : "DIFFER",
                      all_close.size(), misses + planted_misses)};
}

Outcome kneser_ney() {
    std::mt19937_64 rng(3);
    const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
    double worst = 0.0;
    std::size_t queries = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int order = 1 + trial % 5;
        std::vector<std::vector<std::string>> sentences;
        std::string text;
        int tokens = 0;
        while (true) {
            const int len = 1 + static_cast<int>(rng() % 6);
            if (tokens + len > 30) break;
            std::vector<std::string> s;
            for (int i = 0; i < len; ++i) s.push_back(words[rng() % words.size()]);
            tokens += len;
            for (const auto& w : s) text += w + " ";
            text += "\n";
            sentences.push_back(s);
        }
        const auto m = ngram::train_kn({{"x", text, "C4", Lang::en}}, {order, 0.75});
        const testing::KnOracle oracle(sentences, order, 0.75);
        for (int q = 0; q < 20; ++q) {
            std::vector<std::string> ctx;
            if (rng() % 3 == 0) ctx.push_back("<s>");
            const int n = static_cast<int>(rng() % 4);
            for (int i = 0; i < n; ++i) ctx.push_back(words[rng() % words.size()]);
            for (const auto& w : {"a", "b", "c", "d", "e", "</s>", "<unk>"}) {
                worst = std::max(worst, std::abs(std::exp(m.log_prob(ctx, w)) - oracle.prob(ctx, w)));
                ++queries;
            }
        }
    }

    std::vector<Document> docs;
    const std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota"};
    for (int d = 0; d < 40; ++d) {
        std::string text;
        for (int i = 0; i < 50; ++i) text += vocab[rng() % vocab.size()] + (i % 7 == 6 ? ".\n" : " ");
        docs.push_back({"d" + std::to_string(d), text, "C4", Lang::en});
    }
    const auto m = ngram::train_kn(docs, {5, 0.75});
    double norm_err = 0.0;
    for (int c = 0; c < 100; ++c) {
        std::vector<std::string> ctx;
        if (rng() % 3 == 0) ctx.push_back("<s>");
        const int n = static_cast<int>(rng() % 5);
        for (int i = 0; i < n; ++i) ctx.push_back(vocab[rng() % vocab.size()] + (rng() % 4 == 0 ? "." : ""));
        double sum = 0.0;
        for (const auto& w : m.vocab()) {
            if (w != "<s>") sum += std::exp(m.log_prob(ctx, w));
        }
        norm_err = std::max(norm_err, std::abs(sum - 1.0));
    }
    return {worst <= 1e-12 && norm_err <= 1e-9,
            fmt("%zu oracle queries, max difference %.2g; 100 contexts, max |sum - 1| %.2g", queries, worst, norm_err)};
}

Outcome accumulation() {
    nn::ModelConfig mcfg = nn::ModelConfig::toy();
    mcfg.vocab_size = 96;
    std::mt19937_64 rng(8);
    std::vector<train::Sequence> batch(8);
    for (auto& s : batch) {
        for (int i = 0; i < 33; ++i) s.push_back(static_cast<nn::TokenId>(rng() % 96));
    }
    train::TrainConfig base;
    base.sequence_length = 33;
    auto run = [&](std::uint64_t micro, std::uint64_t accum, std::uint64_t ranks) {
        auto cfg = base;
        cfg.micro_batch = micro;
        cfg.grad_accum = accum;
        cfg.ranks = ranks;
        auto p = nn::init_params(mcfg, 4);
        auto state = train::OptimizerState::zeros(mcfg);
        for (int step = 0; step < 3; ++step) train::train_step(p, state, batch, cfg, 1e-3);
        return p;
    };
    const auto full = run(8, 1, 1);
    double worst = 0.0;
    for (const auto& [m, a, r] : {std::tuple{2, 4, 1}, std::tuple{1, 8, 1}, std::tuple{1, 4, 2}}) {
        const auto p = run(m, a, r);
        const auto x = p.tensors();
        const auto y = full.tensors();
        for (std::size_t t = 0; t < x.size(); ++t) {
            for (std::size_t i = 0; i < x[t].tensor->data.size(); ++i) {
                worst = std::max(worst, std::abs(x[t].tensor->data[i] - y[t].tensor->data[i]));
            }
        }
    }
    return {worst <= 1e-10, fmt("3 steps, accumulation 4/8 and 2 ranks vs full batch: max parameter difference %.2g", worst)};
}

Outcome pipeline_smoke() {
    testing::TempDir dir;
    const auto toy = testing::source_dir() / "data" / "toy";
    for (const auto& e : fs::directory_iterator(toy)) {
        if (e.path().filename() != "pipeline.json") fs::copy_file(e.path(), dir / e.path().filename().string());
    }
    nlohmann::json cfg = nlohmann::json::parse(testing::read_text(toy / "pipeline.json"));
    cfg["input"] = testing::fixture_corpus().string();
    cfg["workspace"] = (dir.path() / "ws").string();
    testing::write_text(dir / "pipeline.json", cfg.dump(2));

    const auto report = pipeline::run_pipeline(pipeline::load_pipeline_config(dir / "pipeline.json"));
    const auto ws = dir.path() / "ws";
    bool artifacts = true;
    for (const char* f : {"filter/docs.jsonl", "dedup/dedup_report.json", "tok/tokenizer.json", "mix/tokens.bin",
                          "train/train_log.csv", "train/final.ckpt"}) {
        artifacts = artifacts && fs::exists(ws / f);
    }
    const auto log = train::read_log_csv(ws / "train" / "train_log.csv");
    bool finite = !log.empty();
    for (const auto& r : log) finite = finite && std::isfinite(r.param_l2) && r.param_l2 > 0.0;
    const auto final_params = nn::load_checkpoint(ws / "train" / "final.ckpt");
    const double l2 = train::param_l2_norm(final_params);
    const bool l2_matches = !log.empty() && std::abs(log.back().param_l2 - l2) <= 1e-12 * l2;

    auto unit = nn::Params::zeros(final_params.config);
    unit.embedding.data[0] = 3.0;
    unit.output.data[1] = 4.0;
    const bool unit_ok = train::param_l2_norm(unit) == 5.0;

    const bool decreasing = !log.empty() && log.back().train_loss < log.front().train_loss;
    const bool pass = report.stages.size() == 6 && artifacts && decreasing && finite && l2_matches && unit_ok;
    return {pass, fmt("6 stages, %zu log rows; train_loss %.3f -> %.3f; param_l2 finite %s, matches checkpoint %s, "
                      "3-4-5 check %s",
                      log.size(), log.empty() ? NAN : log.front().train_loss, log.empty() ? NAN : log.back().train_loss,
                      finite ? "yes" : "no", l2_matches ? "yes" : "no", unit_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"schedule exactness", schedule},
        {"token arithmetic", token_arithmetic},
        {"mixture table validation", mixture_table},
        {"gradient correctness", gradient_check},
        {"architecture oracles", architecture},
        {"overfitting oracle", overfit},
        {"tokenizer properties", tokenizer_properties},
        {"dedup oracle", dedup_oracle},
        {"kneser-ney oracle", kneser_ney},
        {"gradient-accumulation equivalence", accumulation},
        {"end-to-end pipeline smoke", pipeline_smoke},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
