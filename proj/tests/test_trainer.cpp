#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "forge/error.hpp"
#include "forge/trainer.hpp"
#include "support/temp_dir.hpp"

using namespace forge;
using namespace forge::train;

namespace {

nn::ModelConfig small_model() {
    nn::ModelConfig c;
    c.hidden_size = 32;
    c.intermediate_size = 88;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.n_layers = 2;
    c.context_len = 32;
    c.vocab_size = 48;
    return c;
}

std::vector<Sequence> patterned_sequences(std::size_t count, std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Sequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        Sequence s;
        nn::TokenId t = static_cast<nn::TokenId>(rng() % 8);
        for (std::size_t k = 0; k < len; ++k) {
            s.push_back(t);
            t = (rng() % 5 == 0) ? static_cast<nn::TokenId>(rng() % 48) : (t * 3 + 1) % 48;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void fill(Params& p, double value) {
    for (auto& ref : p.tensors()) std::fill(ref.tensor->data.begin(), ref.tensor->data.end(), value);
}

}  // namespace

TEST_CASE("configuration") {
    const auto full = TrainConfig::xmodel();
    CHECK(full.lr_max == 6e-4);
    CHECK(full.lr_min == 6e-5);
    CHECK(full.warmup_steps == 2000);
    CHECK(full.total_steps == 600000);
    CHECK(full.weight_decay == 0.1);
    CHECK(full.clip_norm == 1.0);
    CHECK(full.sequences_per_step() == 840);
    CHECK(tokens_seen(600000, full, 4096) == 2064384000000ULL);
    CHECK(tokens_seen(1, full, 4096) == 3440640);
    CHECK(TrainConfig{}.ranks == 1);

    auto bad = full;
    bad.lr_min = 1e-3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = full;
    bad.warmup_steps = bad.total_steps;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = full;
    bad.grad_accum = 0;
    CHECK_THROWS_AS(bad.validate(), Error);

    testing::TempDir dir;
    save_train_config(dir / "t.json", full);
    CHECK(load_train_config(dir / "t.json") == full);
}

TEST_CASE("learning-rate schedule") {
    const auto cfg = TrainConfig::xmodel();
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(1000, cfg) == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(lr_at(2000, cfg) == doctest::Approx(6e-4).epsilon(1e-12));
    CHECK(lr_at(600000, cfg) == doctest::Approx(6e-5).epsilon(1e-12));
    CHECK(lr_at(1999, cfg) < lr_at(2000, cfg));
    CHECK(lr_at(2000, cfg) - lr_at(1999, cfg) == doctest::Approx(6e-4 / 2000).epsilon(1e-9));
    const double mid = lr_at(301000, cfg);
    CHECK(mid == doctest::Approx(0.5 * (6e-4 + 6e-5)).epsilon(1e-12));
    double prev = lr_at(2000, cfg);
    for (std::uint64_t s = 2000; s <= 600000; s += 997) {
        const double cur = lr_at(s, cfg);
        CHECK(cur <= prev);
        CHECK(cur >= 6e-5);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(600001, cfg), Error);
}

TEST_CASE("gradient clipping") {
    const auto cfg = small_model();
    auto g = Params::zeros(cfg);
    g.embedding.data[0] = 0.3;
    g.output.data[5] = 0.4;
    const auto before = g;
    CHECK(clip_grads(g, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g == before);

    g.embedding.data[0] = 2.4;
    g.output.data[5] = 3.2;
    CHECK(clip_grads(g, 1.0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(std::abs(global_norm(g) - 1.0) <= 1e-12);
    CHECK(g.embedding.data[0] == doctest::Approx(0.6).epsilon(1e-14));

    auto zero = Params::zeros(cfg);
    CHECK(clip_grads(zero, 1.0) == 0.0);
    CHECK(zero == Params::zeros(cfg));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> dist(0.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        auto r = Params::zeros(cfg);
        for (auto& ref : r.tensors()) {
            for (auto& x : ref.tensor->data) x = dist(rng);
        }
        clip_grads(r, 1.0);
        CHECK(global_norm(r) <= 1.0 + 1e-9);
    }

    g.layers[1].w_up.data[3] = std::nan("");
    try {
        clip_grads(g, 1.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("non_finite_gradient") != std::string::npos);
    }
}

TEST_CASE("AdamW closed forms") {
    const auto mcfg = small_model();
    auto cfg = TrainConfig::xmodel();

    SUBCASE("zero gradients without decay leave parameters alone") {
        cfg.weight_decay = 0.0;
        auto p = nn::init_params(mcfg, 1);
        const auto before = p;
        auto state = OptimizerState::zeros(mcfg);
        for (int i = 0; i < 3; ++i) adamw_step(p, Params::zeros(mcfg), state, 1e-3, cfg);
        CHECK(p == before);
        CHECK(state.step == 3);
    }

    SUBCASE("first step with unit gradients moves by lr") {
        cfg.weight_decay = 0.0;
        auto p = Params::zeros(mcfg);
        auto g = Params::zeros(mcfg);
        fill(g, 1.0);
        auto state = OptimizerState::zeros(mcfg);
        adamw_step(p, g, state, 1e-3, cfg);
        for (const auto& ref : p.tensors()) {
            for (double x : ref.tensor->data) CHECK(x == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
        }
    }

    SUBCASE("decay alone is geometric and skips norm gains") {
        cfg.weight_decay = 0.1;
        auto p = Params::zeros(mcfg);
        fill(p, 2.0);
        auto state = OptimizerState::zeros(mcfg);
        const double lr = 1e-2;
        for (int i = 0; i < 5; ++i) adamw_step(p, Params::zeros(mcfg), state, lr, cfg);
        const double want = 2.0 * std::pow(1.0 - lr * 0.1, 5);
        for (const auto& ref : p.tensors()) {
            for (double x : ref.tensor->data) {
                if (ref.is_norm_gain) {
                    CHECK(x == 2.0);
                } else {
                    CHECK(x == doctest::Approx(want).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("parameter L2 norm") {
    const auto mcfg = small_model();
    auto p = Params::zeros(mcfg);
    CHECK(param_l2_norm(p) == 0.0);
    p.embedding.data[7] = 3.0;
    p.layers[0].ffn_norm.data[2] = 4.0;
    CHECK(param_l2_norm(p) == 5.0);
    const auto q = nn::init_params(mcfg, 3);
    double ss = 0.0;
    for (const auto& ref : q.tensors()) {
        for (double x : ref.tensor->data) ss += x * x;
    }
    CHECK(param_l2_norm(q) == doctest::Approx(std::sqrt(ss)).epsilon(1e-14));
}

TEST_CASE("accumulation and ranks do not change the update") {
    const auto mcfg = small_model();
    const auto data = patterned_sequences(8, 17, 2);
    TrainConfig base;
    base.sequence_length = 17;
    base.warmup_steps = 1;
    base.total_steps = 10;

    auto run = [&](std::uint64_t micro, std::uint64_t accum, std::uint64_t ranks, unsigned threads) {
        auto cfg = base;
        cfg.micro_batch = micro;
        cfg.grad_accum = accum;
        cfg.ranks = ranks;
        cfg.threads = threads;
        auto p = nn::init_params(mcfg, 8);
        auto state = OptimizerState::zeros(mcfg);
        const auto r = train_step(p, state, data, cfg, 1e-3);
        return std::make_pair(p, r);
    };
    const auto [ref, ref_step] = run(8, 1, 1, 1);
    for (const auto& [micro, accum, ranks] : {std::tuple{1, 8, 1}, std::tuple{2, 4, 1}, std::tuple{2, 2, 2}, std::tuple{1, 1, 8}}) {
        const auto [p, step] = run(micro, accum, ranks, 1);
        CHECK(step.loss == doctest::Approx(ref_step.loss).epsilon(1e-12));
        CHECK(step.grad_norm == doctest::Approx(ref_step.grad_norm).epsilon(1e-10));
        double worst = 0.0;
        const auto a = p.tensors();
        const auto b = ref.tensors();
        for (std::size_t t = 0; t < a.size(); ++t) {
            for (std::size_t i = 0; i < a[t].tensor->data.size(); ++i) {
                worst = std::max(worst, std::abs(a[t].tensor->data[i] - b[t].tensor->data[i]));
            }
        }
        CHECK(worst <= 1e-10);
    }
    // Threaded micro-batches reduce in a fixed order.
    const auto [t1, s1] = run(1, 8, 1, 1);
    const auto [t4, s4] = run(1, 8, 1, 4);
    CHECK(t1 == t4);
    CHECK(s1.loss == s4.loss);
}

TEST_CASE("validation is deterministic and side-effect free") {
    const auto mcfg = small_model();
    const auto p = nn::init_params(mcfg, 5);
    const auto copy = p;
    const auto seqs = patterned_sequences(3, 20, 9);
    const double a = validate(p, seqs);
    const double b = validate(p, seqs);
    CHECK(a == b);
    CHECK(p == copy);
    CHECK(a == doctest::Approx(std::log(48.0)).epsilon(0.05));
    CHECK_THROWS_AS(validate(p, {}), Error);

    const std::vector<Document> train_docs = {{"a", "x", "C4", Lang::en}, {"b", "y", "C4", Lang::en}};
    CHECK_NOTHROW(check_disjoint(train_docs, {{"c", "z", "C4", Lang::en}}));
    CHECK_THROWS_AS(check_disjoint(train_docs, {{"b", "z", "C4", Lang::en}}), Error);

    Sequence in, tgt;
    split_sequence({4, 5, 6}, in, tgt);
    CHECK(in == Sequence{4, 5});
    CHECK(tgt == Sequence{5, 6});
}

TEST_CASE("validation packing keeps a short tail") {
    const auto byte_tok = tok::byte_level_model();
    const std::vector<Document> docs = {{"a", "abcdefghij", "C4", Lang::en}};  // 10 bytes + eos
    const auto seqs = pack_validation(docs, byte_tok, 4);
    REQUIRE(seqs.size() == 3);
    CHECK(seqs[0].size() == 4);
    CHECK(seqs[2].size() == 3);
    CHECK(seqs[2].back() == tok::kEosId);
}

TEST_CASE("log CSV") {
    std::ostringstream out;
    write_log_header(out);
    write_log_row(out, {10, 3440640, 3e-4, 2.5, std::nullopt, 12.25});
    write_log_row(out, {20, 6881280, 6e-4, 0.1 + 0.2, 1.75, 12.5});
    const auto text = out.str();
    CHECK(text.rfind(std::string(kLogHeader) + "\n", 0) == 0);
    CHECK(text.find(",2.5,,12.25") != std::string::npos);
    std::istringstream in(text);
    const auto rows = read_log_csv(in);
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].val_loss.has_value());
    CHECK(rows[1].val_loss == 1.75);
    CHECK(rows[1].train_loss == 0.1 + 0.2);  // round-trips exactly
    CHECK(rows[1].tokens_seen == 6881280);

    std::istringstream broken(std::string(kLogHeader) + "\n1,2,3,4,,5\nnot,a,row\n");
    try {
        read_log_csv(broken);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("a short toy run lowers the loss and logs consistently") {
    const auto mcfg = small_model();
    TrainConfig cfg;
    cfg.lr_max = 3e-3;
    cfg.lr_min = 3e-4;
    cfg.warmup_steps = 20;
    cfg.total_steps = 500;
    cfg.micro_batch = 2;
    cfg.grad_accum = 1;
    cfg.sequence_length = 17;
    cfg.log_interval = 10;
    cfg.checkpoint_interval = 250;
    const auto data = patterned_sequences(40, 17, 21);
    const auto val = patterned_sequences(4, 17, 99);

    std::vector<std::uint64_t> ckpts;
    std::size_t logged = 0;
    TrainHooks hooks;
    hooks.on_log = [&](const TrainLogRow&) { ++logged; };
    hooks.on_checkpoint = [&](std::uint64_t step, const Params&) { ckpts.push_back(step); };
    const auto res = train::train(nn::init_params(mcfg, 1), cfg, data, val, hooks);

    REQUIRE(res.log.size() == 50);
    CHECK(logged == 50);
    CHECK(ckpts == std::vector<std::uint64_t>{250, 500});
    CHECK(res.log.front().step == 10);
    CHECK(res.log.back().step == 500);
    for (const auto& row : res.log) {
        CHECK(row.tokens_seen == row.step * 2 * 17);
        CHECK(row.lr == lr_at(row.step, cfg));
        CHECK(row.val_loss.has_value());
        CHECK(row.param_l2 > 0.0);
    }
    CHECK(res.log.back().train_loss < res.log.front().train_loss);
    CHECK(res.log.back().param_l2 == doctest::Approx(param_l2_norm(res.params)).epsilon(1e-14));

    // Reproducible from the same inputs.
    const auto again = train::train(nn::init_params(mcfg, 1), cfg, data, val);
    CHECK(again.params == res.params);

    auto wrong = cfg;
    wrong.sequence_length = 16;
    CHECK_THROWS_AS(train::train(nn::init_params(mcfg, 1), wrong, data, val), Error);
    CHECK_THROWS_AS(train::train(nn::init_params(mcfg, 1), cfg, {}, val), Error);
}

TEST_CASE("a non-finite loss aborts after a diagnostic row") {
    const auto mcfg = small_model();
    TrainConfig cfg;
    cfg.warmup_steps = 1;
    cfg.total_steps = 5;
    cfg.micro_batch = 1;
    cfg.grad_accum = 1;
    cfg.sequence_length = 9;
    auto p = nn::init_params(mcfg, 2);
    std::fill(p.output.data.begin(), p.output.data.end(), std::numeric_limits<double>::infinity());
    std::vector<TrainLogRow> rows;
    TrainHooks hooks;
    hooks.on_log = [&](const TrainLogRow& r) { rows.push_back(r); };
    CHECK_THROWS_AS(train::train(p, cfg, patterned_sequences(2, 9, 1), {}, hooks), Error);
    REQUIRE(rows.size() == 1);
    CHECK_FALSE(std::isfinite(rows[0].train_loss));
}
