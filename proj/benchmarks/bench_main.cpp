#include <benchmark/benchmark.h>

#include <random>

#include "forge/corpus_io.hpp"
#include "forge/dedup.hpp"
#include "forge/ngram.hpp"
#include "forge/tokenizer.hpp"
#include "forge/trainer.hpp"

using namespace forge;

namespace {

const std::vector<Document>& corpus() {
    static const std::vector<Document> docs = [] {
        std::vector<Document> out;
        auto reader = load_documents(std::filesystem::path(FORGE_SOURCE_DIR) / "data/fixture/corpus.jsonl",
                                     OnRecordError::skip);
        while (auto d = reader.next()) out.push_back(std::move(*d));
        return out;
    }();
    return docs;
}

std::size_t corpus_bytes() {
    std::size_t n = 0;
    for (const auto& d : corpus()) n += d.text.size();
    return n;
}

const tok::TokenizerModel& tokenizer() {
    static const tok::TokenizerModel m = [] {
        tok::TokenizerSettings s;
        s.vocab_size = 1200;
        std::vector<Document> sample(corpus().begin(), corpus().begin() + 300);
        return tok::train_unigram(sample, s);
    }();
    return m;
}

void BM_Simhash(benchmark::State& state) {
    for (auto _ : state) {
        for (const auto& d : corpus()) benchmark::DoNotOptimize(dedup::simhash(d));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * corpus_bytes()));
}
BENCHMARK(BM_Simhash)->Unit(benchmark::kMillisecond);

void BM_BucketCandidates(benchmark::State& state) {
    std::mt19937_64 rng(1);
    std::vector<dedup::Fingerprint> fps;
    for (int i = 0; i < state.range(0); ++i) fps.push_back({std::to_string(i), rng()});
    for (auto _ : state) benchmark::DoNotOptimize(dedup::bucket_candidates(fps, {4, 3}));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BucketCandidates)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_KnTrain(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(ngram::train_kn(corpus(), {5, 0.75}));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * corpus_bytes()));
}
BENCHMARK(BM_KnTrain)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_Encode(benchmark::State& state) {
    const auto& m = tokenizer();
    for (auto _ : state) {
        for (const auto& d : corpus()) benchmark::DoNotOptimize(tok::encode(m, d.text));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * corpus_bytes()));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
    const auto cfg = nn::ModelConfig::toy();
    const auto params = nn::init_params(cfg, 1);
    const auto L = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    std::vector<nn::TokenId> ids(L), targets(L);
    for (std::size_t i = 0; i < L; ++i) {
        ids[i] = static_cast<nn::TokenId>(rng() % cfg.vocab_size);
        targets[i] = static_cast<nn::TokenId>(rng() % cfg.vocab_size);
    }
    for (auto _ : state) benchmark::DoNotOptimize(nn::backward(params, ids, targets));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_AdamW(benchmark::State& state) {
    const auto cfg = nn::ModelConfig::toy();
    auto params = nn::init_params(cfg, 1);
    const auto grads = nn::init_params(cfg, 2);
    auto opt = train::OptimizerState::zeros(cfg);
    const auto tcfg = train::TrainConfig::xmodel();
    for (auto _ : state) train::adamw_step(params, grads, opt, 1e-4, tcfg);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(params.scalar_count()));
}
BENCHMARK(BM_AdamW);

}  // namespace
BENCHMARK_MAIN();
