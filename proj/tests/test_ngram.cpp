#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "forge/error.hpp"
#include "forge/ngram.hpp"
#include "support/kn_oracle.hpp"
#include "support/temp_dir.hpp"

using namespace forge;
using namespace forge::ngram;

namespace {

Document en(std::string id, std::string text) { return {std::move(id), std::move(text), "C4", Lang::en}; }

double prob(const NgramModel& m, const std::vector<std::string>& ctx, const std::string& w) {
    return std::exp(m.log_prob(ctx, w));
}

std::vector<std::string> predictable(const NgramModel& m) {
    std::vector<std::string> out;
    for (const auto& w : m.vocab()) {
        if (w != "<s>") out.push_back(w);
    }
    return out;
}

}  // namespace

TEST_CASE("sentence and word splitting") {
    const auto en_s = split_sentences("Hello there. How are you?\nFine", Lang::en);
    REQUIRE(en_s.size() == 3);
    CHECK(en_s[0] == std::vector<std::string>{"Hello", "there."});
    CHECK(en_s[2] == std::vector<std::string>{"Fine"});
    const auto zh_s = split_sentences("中文好。你好", Lang::zh);
    REQUIRE(zh_s.size() == 2);
    CHECK(zh_s[0] == std::vector<std::string>{"中", "文", "好", "。"});
    CHECK(split_sentences("   \n  ", Lang::en).empty());
}

TEST_CASE("bigram model on 'a b a b a' matches hand-computed Kneser-Ney") {
    const auto m = train_kn({en("1", "a b a b a")}, {2, 0.75});
    // Unigram continuation counts a:2 b:1 </s>:1 over 4 predictable words.
    CHECK(prob(m, {}, "a") == doctest::Approx(0.453125).epsilon(1e-14));
    CHECK(prob(m, {}, "<unk>") == doctest::Approx(0.140625).epsilon(1e-14));
    CHECK(std::abs(prob(m, {"a"}, "b") - 199.0 / 384.0) < 1e-12);
    CHECK(std::abs(prob(m, {"b"}, "a") - 407.0 / 512.0) < 1e-12);

    const testing::KnOracle oracle({{"a", "b", "a", "b", "a"}}, 2, 0.75);
    CHECK(std::abs(oracle.prob({"a"}, "b") - 199.0 / 384.0) < 1e-15);
    CHECK(std::abs(oracle.prob({"b"}, "a") - 407.0 / 512.0) < 1e-15);
}

TEST_CASE("unigram model on 'a a a' normalizes and favours a") {
    const auto m = train_kn({en("1", "a a a")}, {1, 0.75});
    double sum = 0.0;
    for (const auto& w : predictable(m)) sum += prob(m, {}, w);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(prob(m, {}, "a") > prob(m, {}, "</s>"));
    CHECK(prob(m, {}, "a") > prob(m, {}, "<unk>"));
}

TEST_CASE("unseen words get finite probability through <unk>") {
    const auto m = train_kn({en("1", "the cat sat on the mat")}, {3, 0.75});
    const double lp = m.log_prob({"the"}, "zzz");
    CHECK(std::isfinite(lp));
    CHECK(lp == m.log_prob({"the"}, "<unk>"));
}

TEST_CASE("brute-force oracle agreement on small random corpora") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> words = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 40; ++trial) {
        const int order = 1 + static_cast<int>(rng() % 3);
        std::vector<std::vector<std::string>> sentences;
        std::string text;
        int tokens = 0;
        while (tokens < 25) {
            std::vector<std::string> s;
            const int len = 1 + static_cast<int>(rng() % 6);
            for (int i = 0; i < len; ++i) s.push_back(words[rng() % words.size()]);
            tokens += len;
            for (const auto& w : s) text += w + " ";
            text += "\n";
            sentences.push_back(s);
        }
        const auto m = train_kn({en("x", text)}, {order, 0.75});
        const testing::KnOracle oracle(sentences, order, 0.75);
        std::vector<std::string> ctx_words = {"<s>", "a", "b", "c", "d", "e"};
        for (int q = 0; q < 30; ++q) {
            std::vector<std::string> ctx;
            const int n = static_cast<int>(rng() % 3);
            for (int i = 0; i < n; ++i) ctx.push_back(ctx_words[rng() % ctx_words.size()]);
            if (std::find(ctx.begin() + (ctx.empty() ? 0 : 1), ctx.end(), "<s>") != ctx.end()) continue;
            for (const auto& w : {"a", "b", "c", "d", "</s>", "<unk>"}) {
                CHECK(std::abs(prob(m, ctx, w) - oracle.prob(ctx, w)) < 1e-12);
            }
        }
    }
}

TEST_CASE("conditional distributions sum to one across random contexts") {
    std::vector<Document> docs;
    std::mt19937_64 rng(17);
    const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
    for (int d = 0; d < 50; ++d) {
        std::string text;
        for (int i = 0; i < 40; ++i) text += words[rng() % words.size()] + (i % 9 == 8 ? ".\n" : " ");
        docs.push_back(en("d" + std::to_string(d), text));
    }
    const auto m = train_kn(docs, {5, 0.75});
    const auto vocab = predictable(m);
    for (int c = 0; c < 100; ++c) {
        std::vector<std::string> ctx;
        if (rng() % 3 == 0) ctx.push_back("<s>");
        const int n = static_cast<int>(rng() % 5);
        for (int i = 0; i < n; ++i) ctx.push_back(rng() % 10 == 0 ? "unseen" : m.vocab()[3 + rng() % (vocab.size() - 2)]);
        double sum = 0.0;
        for (const auto& w : vocab) {
            const double p = prob(m, ctx, w);
            CHECK(p > 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("training preconditions") {
    CHECK_THROWS_AS(train_kn({}, {}), Error);
    CHECK_THROWS_AS(train_kn({en("1", "   ")}, {}), Error);
    CHECK_THROWS_AS(train_kn({en("1", "a")}, {0, 0.75}), Error);
    CHECK_THROWS_AS(train_kn({en("1", "a")}, {2, 0.0}), Error);
    CHECK_THROWS_AS(train_kn({en("1", "a")}, {2, 1.5}), Error);
}

TEST_CASE("model file round-trips exactly") {
    const auto m = train_kn({en("1", "one two three. two three four!\nfour five"), en("2", "five six one two")}, {4, 0.7});
    std::stringstream ss;
    write_model(ss, m);
    const auto back = read_model(ss);
    CHECK(back == m);
    std::stringstream again;
    write_model(again, back);
    std::stringstream first;
    write_model(first, m);
    CHECK(again.str() == first.str());

    std::istringstream bad("forge-kn 9\n");
    CHECK_THROWS_AS(read_model(bad), Error);
}

TEST_CASE("bundle keeps one model per language") {
    testing::TempDir dir;
    const std::vector<Document> docs = {en("1", "a b c"), {"2", "中文字", "Law", Lang::zh}};
    const auto bundle = train_bundle(docs, {3, 0.75});
    REQUIRE(bundle.size() == 2);
    save_bundle(dir / "b.kn", bundle);
    CHECK(load_bundle(dir / "b.kn") == bundle);
    const auto only_en = train_bundle({en("1", "a b c")}, {3, 0.75});
    CHECK_THROWS_AS(perplexity(only_en, Document{"z", "中文", "Law", Lang::zh}), Error);
}

TEST_CASE("perplexity is the exponentiated mean negative log-probability") {
    const auto m = train_kn({en("1", "x y z. y z x. z x y.")}, {3, 0.75});
    const Document d = en("q", "x y. z z x");
    const auto score = perplexity(m, d);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& s : split_sentences(d.text, Lang::en)) {
        std::vector<std::string> ctx = {"<s>"};
        for (const auto& w : s) {
            total += m.log_prob(ctx, w);
            ctx.push_back(w);
            ++n;
        }
        total += m.log_prob(ctx, "</s>");
        ++n;
    }
    CHECK(score.token_count == n);
    CHECK(score.ppl == doctest::Approx(std::exp(-total / static_cast<double>(n))).epsilon(1e-13));
    CHECK_THROWS_AS(perplexity(m, en("empty", " \n ")), Error);
}

TEST_CASE("memorized text scores lower than shuffled vocabulary") {
    std::mt19937_64 rng(23);
    std::vector<std::string> words;
    for (int i = 0; i < 60; ++i) words.push_back("w" + std::to_string(i));
    std::vector<Document> docs;
    for (int d = 0; d < 50; ++d) {
        std::string text;
        for (int i = 0; i < 30; ++i) text += words[rng() % words.size()] + " ";
        docs.push_back(en("d" + std::to_string(d), text));
    }
    const auto m = train_kn(docs, {5, 0.75});
    const auto memorized = perplexity(m, docs[7]);
    std::string shuffled;
    for (int i = 0; i < 30; ++i) shuffled += words[rng() % words.size()] + " ";
    const auto random = perplexity(m, en("r", shuffled));
    CHECK(memorized.ppl >= 1.0);
    CHECK(memorized.ppl < random.ppl);

    const auto single = train_kn({en("a", "a a a a a a a a")}, {5, 0.75});
    CHECK(perplexity(single, en("b", "a a a a a a a a")).ppl >= 1.0);
}

TEST_CASE("perplexity filters") {
    const std::vector<PplScore> s = {{"A", 10, 1}, {"B", 20, 1}, {"C", 30, 1}};
    CHECK(ppl_filter(s, PplThreshold{20}).keep == std::set<std::string>{"A", "B"});
    CHECK(ppl_filter(s, PplPercentile{34}).keep == std::set<std::string>{"A"});
    CHECK(ppl_filter(s, PplPercentile{100}).keep == std::set<std::string>{"A", "B", "C"});
    const std::vector<PplScore> ties = {{"A", 10, 1}, {"B", 10, 1}, {"C", 30, 1}};
    CHECK(ppl_filter(ties, PplPercentile{34}).keep == std::set<std::string>{"A", "B"});
    const auto empty = ppl_filter({}, PplPercentile{50});
    CHECK(empty.keep.empty());
    CHECK(empty.warning.has_value());
    CHECK(ppl_filter({}, PplThreshold{5}).warning.has_value());
}

TEST_CASE("scores CSV round-trip") {
    testing::TempDir dir;
    const std::vector<PplScore> s = {{"A", 10.125, 4}, {"doc,with,commas", 3.0000000000000004, 9}};
    write_scores_csv(dir / "s.csv", s);
    const auto back = read_scores_csv(dir / "s.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].doc_id == s[1].doc_id);
    CHECK(back[1].ppl == s[1].ppl);
    CHECK(back[1].token_count == 9);
}
