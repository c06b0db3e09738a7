#include "forge/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>

#include "forge/corpus_io.hpp"
#include "forge/dedup.hpp"
#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/mixture.hpp"
#include "forge/model.hpp"
#include "forge/ngram.hpp"
#include "forge/tokenizer.hpp"

namespace forge::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 6> kStageNames = {"filter", "kn", "dedup", "tok", "mix", "train"};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw usage_error("bad JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

std::string file_hash(const fs::path& p) { return to_hex16(hash_file(p)); }

// Where the latest artifact of each kind lives as stages hand off.
struct Artifacts {
    fs::path docs;
    std::optional<fs::path> tokenizer;
    std::optional<fs::path> tokens;
    std::optional<fs::path> val_docs;
};

struct StagePlan {
    std::vector<std::pair<std::string, fs::path>> inputs;  // upstream artifacts and referenced files
    std::vector<fs::path> outputs;
    bool thread_sensitive = false;
    std::function<std::string()> run;
};

std::string run_filter(const fs::path& in, const FilterRules& rules, const fs::path& out_docs,
                       const fs::path& out_report) {
    auto reader = load_documents(in, OnRecordError::skip);
    std::ofstream out(out_docs, std::ios::binary);
    if (!out) throw data_error("cannot write " + out_docs.string());
    std::map<std::string, std::size_t> reasons;
    std::size_t read = 0;
    std::size_t kept = 0;
    while (auto doc = reader.next()) {
        ++read;
        const auto verdict = heuristic_filter(*doc, rules);
        ++reasons[std::string(to_string(verdict.reason))];
        if (verdict.keep) {
            write_document(out, *doc);
            ++kept;
        }
    }
    ordered_json report = {{"read", read}, {"kept", kept}, {"malformed", reader.errors().size()}};
    report["reasons"] = reasons;
    auto& errs = report["errors"] = ordered_json::array();
    for (const auto& e : reader.errors()) errs.push_back({{"line", e.line}, {"message", e.message}});
    write_json(out_report, report);
    return "kept " + std::to_string(kept) + " of " + std::to_string(read) + " documents (" +
           std::to_string(reader.errors().size()) + " malformed lines skipped)";
}

std::string run_kn(const fs::path& in, const json& cfg, const fs::path& cfg_dir, const fs::path& out_model,
                   const fs::path& out_scores, const fs::path& out_docs) {
    ngram::KnOptions opts;
    opts.order = cfg.value("order", opts.order);
    opts.discount = cfg.value("discount", opts.discount);
    const auto docs = read_all_documents(in);
    const auto reference = cfg.contains("reference")
                               ? read_all_documents(resolve(cfg_dir, cfg.at("reference").get<std::string>()))
                               : docs;
    const auto bundle = ngram::train_bundle(reference, opts);
    ngram::save_bundle(out_model, bundle);
    std::vector<ngram::PplScore> scores;
    std::size_t wordless = 0;
    for (const auto& d : docs) {
        try {
            scores.push_back(ngram::perplexity(bundle, d));
        } catch (const Error& e) {
            if (std::string_view(e.what()).rfind("token_count_zero", 0) != 0) throw;
            ++wordless;
        }
    }
    ngram::write_scores_csv(out_scores, scores);
    ngram::PplFilterResult keep;
    if (cfg.contains("max_ppl")) {
        keep = ngram::ppl_filter(scores, ngram::PplThreshold{cfg.at("max_ppl").get<double>()});
    } else {
        keep = ngram::ppl_filter(scores, ngram::PplPercentile{cfg.value("percentile", 100.0)});
    }
    std::vector<Document> kept;
    for (const auto& d : docs) {
        if (keep.keep.count(d.id)) kept.push_back(d);
    }
    write_documents(out_docs, kept);
    std::string summary = "kept " + std::to_string(kept.size()) + " of " + std::to_string(docs.size()) + " documents";
    if (wordless) summary += ", " + std::to_string(wordless) + " without words dropped";
    if (keep.warning) summary += " (" + *keep.warning + ")";
    return summary;
}

std::string run_dedup(const fs::path& in, const json& cfg, const fs::path& out_docs, const fs::path& out_report,
                      const fs::path& out_fps) {
    dedup::BucketingConfig bc;
    bc.bands = cfg.value("bands", bc.bands);
    bc.hamming_threshold = cfg.value("hamming_threshold", bc.hamming_threshold);
    dedup::ShingleOptions so;
    so.width = cfg.value("shingle_width", so.width);
    const auto docs = read_all_documents(in);
    const auto result = dedup::dedup(docs, bc, so);
    std::vector<dedup::Fingerprint> fps;
    fps.reserve(docs.size());
    for (const auto& d : docs) fps.push_back(dedup::simhash(d, so));
    dedup::write_fingerprints_csv(out_fps, fps);
    dedup::write_report(out_report, result.report);
    const auto& kept = result.kept;
    write_documents(out_docs, kept);
    return "kept " + std::to_string(kept.size()) + " of " + std::to_string(docs.size()) + " documents in " +
           std::to_string(result.report.clusters.size()) + " duplicate clusters";
}

std::string run_tok(const fs::path& in, const fs::path& cfg_path, const fs::path& out_model) {
    const auto settings = tok::load_settings(cfg_path);
    const auto docs = read_all_documents(in);
    const auto model = tok::train_unigram(docs, settings);
    tok::save_model(out_model, model);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", tok::compression_rate(model, docs));
    return std::to_string(settings.vocab_size) + "-piece tokenizer, " + buf + " tokens per character";
}

std::string run_mix(const fs::path& in, const json& cfg, const fs::path& mixture_path, const fs::path& tokenizer_path,
                    std::uint64_t seed, const fs::path& out_tokens, const fs::path& out_val, const fs::path& out_report) {
    const auto spec = mix::load_mixture_spec(mixture_path);
    const auto report = mix::validate_mixture(spec);
    ordered_json rj = {{"weight_sum", report.weight_sum}, {"findings", report.findings}};
    write_json(out_report, rj);

    auto docs = read_all_documents(in);
    const std::size_t val_count = cfg.value("val_docs", std::size_t{0});
    if (val_count >= docs.size()) throw data_error("val_docs must leave training documents");
    // Held-out documents are chosen by a seeded hash of the id so the split
    // does not depend on file order.
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    for (std::size_t i = 0; i < docs.size(); ++i) order.emplace_back(mix64(avalanche_hash(docs[i].id) ^ seed), i);
    std::sort(order.begin(), order.end());
    std::vector<bool> held(docs.size(), false);
    for (std::size_t i = 0; i < val_count; ++i) held[order[i].second] = true;

    const auto tokenizer = tok::load_model(tokenizer_path);
    std::vector<Document> val;
    std::map<std::string, std::vector<mix::TokenDoc>> datasets;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (held[i]) {
            val.push_back(docs[i]);
        } else {
            datasets[docs[i].source].push_back(tok::encode(tokenizer, docs[i].text));
        }
    }
    write_documents(out_val, val);
    mix::TokenFile file;
    for (const auto& e : spec.entries) file.sources.push_back(e.name);
    file.docs = mix::sample_stream(spec, datasets, seed);
    mix::write_token_file(out_tokens, file);
    return std::to_string(file.docs.size()) + " sampled documents, " + std::to_string(spec.total_training_tokens) +
           " tokens, " + std::to_string(val.size()) + " held out";
}

std::string run_train(const fs::path& model_cfg_path, const fs::path& train_cfg_path, const fs::path& tokens_path,
                      const fs::path& val_path, const fs::path& tokenizer_path, std::uint64_t seed, unsigned threads,
                      const fs::path& out_log, const fs::path& out_ckpt, const fs::path& ckpt_dir) {
    const auto mcfg = nn::load_model_config(model_cfg_path);
    auto tcfg = train::load_train_config(train_cfg_path);
    tcfg.threads = threads;
    const auto tokenizer = tok::load_model(tokenizer_path);
    if (mcfg.vocab_size < tokenizer.id_count()) {
        throw usage_error("model vocab_size " + std::to_string(mcfg.vocab_size) + " is smaller than the tokenizer's " +
                          std::to_string(tokenizer.id_count()) + " ids");
    }
    const auto file = mix::read_token_file(tokens_path);
    mix::SequencePacker packer(tcfg.sequence_length, tok::kEosId);
    for (const auto& d : file.docs) packer.push(d.tokens);
    const auto data = packer.take();
    if (data.empty()) throw data_error("token stream is shorter than one sequence");
    const auto val_docs = read_all_documents(val_path);
    const auto val = val_docs.empty() ? std::vector<train::Sequence>{}
                                      : train::pack_validation(val_docs, tokenizer, tcfg.sequence_length);

    std::ofstream log(out_log, std::ios::binary);
    if (!log) throw data_error("cannot write " + out_log.string());
    train::write_log_header(log);
    train::TrainHooks hooks;
    hooks.on_log = [&](const train::TrainLogRow& row) {
        train::write_log_row(log, row);
        log.flush();
    };
    if (tcfg.checkpoint_interval > 0) {
        fs::create_directories(ckpt_dir);
        hooks.on_checkpoint = [&](std::uint64_t step, const nn::Params& p) {
            nn::save_checkpoint(ckpt_dir / ("step_" + std::to_string(step) + ".ckpt"), p);
        };
    }
    const auto result = train::train(nn::init_params(mcfg, seed), tcfg, data, val, hooks);
    nn::save_checkpoint(out_ckpt, result.params);
    const auto& first = result.log.front();
    const auto& last = result.log.back();
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu steps over %zu sequences, train_loss %.4f -> %.4f",
                  static_cast<unsigned long long>(tcfg.total_steps), data.size(), first.train_loss, last.train_loss);
    return buf;
}

}  // namespace

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

std::optional<Stage> parse_stage(std::string_view name) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        if (kStageNames[i] == name) return static_cast<Stage>(i);
    }
    return std::nullopt;
}

void PipelineConfig::validate() const {
    if (!stages.empty() && !fs::is_regular_file(input)) throw usage_error("input corpus not found: " + input.string());
    if (workspace.empty()) throw usage_error("pipeline workspace is not set");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i > 0 && stages[i].stage <= stages[i - 1].stage) {
            throw usage_error("stage '" + std::string(to_string(stages[i].stage)) + "' is out of order; expected " +
                              "filter -> kn -> dedup -> tok -> mix -> train");
        }
        if (!fs::is_regular_file(stages[i].config)) {
            throw usage_error("config for stage '" + std::string(to_string(stages[i].stage)) +
                              "' not found: " + stages[i].config.string());
        }
    }
    if (threads < 1) throw usage_error("threads must be >= 1");
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    const auto j = read_json(path);
    const fs::path dir = path.parent_path();
    PipelineConfig cfg;
    try {
        cfg.input = resolve(dir, j.at("input").get<std::string>());
        cfg.workspace = resolve(dir, j.value("workspace", std::string("workspace")));
        cfg.seed = j.value("seed", cfg.seed);
        cfg.threads = j.value("threads", cfg.threads);
        for (const auto& js : j.value("stages", json::array())) {
            const auto name = js.at("stage").get<std::string>();
            const auto stage = parse_stage(name);
            if (!stage) throw usage_error("unknown stage '" + name + "' in " + path.string());
            cfg.stages.push_back({*stage, resolve(dir, js.at("config").get<std::string>())});
        }
    } catch (const json::exception& e) {
        throw usage_error("bad pipeline config " + path.string() + ": " + e.what());
    }
    return cfg;
}

PipelineReport run_pipeline(const PipelineConfig& cfg, std::ostream* log) {
    PipelineReport report;
    if (cfg.stages.empty()) return report;
    cfg.validate();
    Artifacts art;
    art.docs = cfg.input;

    for (const auto& spec : cfg.stages) {
        const std::string name(to_string(spec.stage));
        const fs::path dir = cfg.workspace / name;
        const fs::path cfg_dir = spec.config.parent_path();
        StagePlan plan;
        try {
            fs::create_directories(dir);
            switch (spec.stage) {
                case Stage::filter: {
                    const auto rules = load_filter_rules(spec.config);
                    const fs::path in = art.docs;
                    plan.inputs = {{"docs", in}};
                    plan.outputs = {dir / "docs.jsonl", dir / "filter_report.json"};
                    plan.run = [=] { return run_filter(in, rules, dir / "docs.jsonl", dir / "filter_report.json"); };
                    art.docs = dir / "docs.jsonl";
                    break;
                }
                case Stage::kn: {
                    const auto j = read_json(spec.config);
                    const fs::path in = art.docs;
                    plan.inputs = {{"docs", in}};
                    if (j.contains("reference")) {
                        plan.inputs.emplace_back("reference", resolve(cfg_dir, j.at("reference").get<std::string>()));
                    }
                    plan.outputs = {dir / "docs.jsonl", dir / "kn.model", dir / "scores.csv"};
                    plan.run = [=] {
                        return run_kn(in, j, cfg_dir, dir / "kn.model", dir / "scores.csv", dir / "docs.jsonl");
                    };
                    art.docs = dir / "docs.jsonl";
                    break;
                }
                case Stage::dedup: {
                    const auto j = read_json(spec.config);
                    const fs::path in = art.docs;
                    plan.inputs = {{"docs", in}};
                    plan.outputs = {dir / "docs.jsonl", dir / "dedup_report.json", dir / "fingerprints.csv"};
                    plan.run = [=] {
                        return run_dedup(in, j, dir / "docs.jsonl", dir / "dedup_report.json",
                                         dir / "fingerprints.csv");
                    };
                    art.docs = dir / "docs.jsonl";
                    break;
                }
                case Stage::tok: {
                    const fs::path in = art.docs;
                    const fs::path conf = spec.config;
                    plan.inputs = {{"docs", in}};
                    plan.outputs = {dir / "tokenizer.json"};
                    plan.run = [=] { return run_tok(in, conf, dir / "tokenizer.json"); };
                    art.tokenizer = dir / "tokenizer.json";
                    break;
                }
                case Stage::mix: {
                    const auto j = read_json(spec.config);
                    const fs::path in = art.docs;
                    const fs::path mixture = resolve(cfg_dir, j.at("mixture").get<std::string>());
                    fs::path tokenizer;
                    if (j.contains("tokenizer")) {
                        tokenizer = resolve(cfg_dir, j.at("tokenizer").get<std::string>());
                    } else if (art.tokenizer) {
                        tokenizer = *art.tokenizer;
                    } else {
                        throw usage_error("no tokenizer: add a tok stage or set \"tokenizer\" in the mix config");
                    }
                    plan.inputs = {{"docs", in}, {"mixture", mixture}, {"tokenizer", tokenizer}};
                    plan.outputs = {dir / "tokens.bin", dir / "val.jsonl", dir / "mix_report.json"};
                    const std::uint64_t seed = cfg.seed;
                    plan.run = [=] {
                        return run_mix(in, j, mixture, tokenizer, seed, dir / "tokens.bin", dir / "val.jsonl",
                                       dir / "mix_report.json");
                    };
                    art.tokenizer = tokenizer;
                    art.tokens = dir / "tokens.bin";
                    art.val_docs = dir / "val.jsonl";
                    break;
                }
                case Stage::train: {
                    const auto j = read_json(spec.config);
                    if (!art.tokens || !art.val_docs || !art.tokenizer) {
                        throw usage_error("the train stage needs a preceding mix stage");
                    }
                    const fs::path model_cfg = resolve(cfg_dir, j.at("model_config").get<std::string>());
                    const fs::path train_cfg = resolve(cfg_dir, j.at("train_config").get<std::string>());
                    const fs::path tokens = *art.tokens;
                    const fs::path val = *art.val_docs;
                    const fs::path tokenizer = *art.tokenizer;
                    plan.inputs = {{"tokens", tokens},
                                   {"val_docs", val},
                                   {"tokenizer", tokenizer},
                                   {"model_config", model_cfg},
                                   {"train_config", train_cfg}};
                    plan.outputs = {dir / "train_log.csv", dir / "final.ckpt"};
                    plan.thread_sensitive = true;
                    const std::uint64_t seed = cfg.seed;
                    const unsigned threads = cfg.threads;
                    plan.run = [=] {
                        return run_train(model_cfg, train_cfg, tokens, val, tokenizer, seed, threads,
                                         dir / "train_log.csv", dir / "final.ckpt", dir / "checkpoints");
                    };
                    break;
                }
            }

            ordered_json key;
            for (const auto& [label, path] : plan.inputs) {
                if (!fs::is_regular_file(path)) throw usage_error("missing input " + path.string());
                key["inputs"][label] = file_hash(path);
            }
            key["config"] = file_hash(spec.config);
            key["seed"] = cfg.seed;
            if (plan.thread_sensitive) key["threads"] = cfg.threads;

            const fs::path manifest_path = dir / "manifest.json";
            StageOutcome outcome{spec.stage, StageStatus::ran, plan.outputs, {}};
            bool cached = false;
            if (fs::is_regular_file(manifest_path)) {
                try {
                    const auto old = read_json(manifest_path);
                    cached = old.at("key") == json(key);
                    for (const auto& out : plan.outputs) {
                        const auto name_key = out.filename().string();
                        cached = cached && fs::is_regular_file(out) &&
                                 old.at("outputs").value(name_key, std::string()) == file_hash(out);
                    }
                    if (cached) outcome.summary = old.value("summary", std::string());
                } catch (const std::exception&) {
                    cached = false;
                }
            }
            if (cached) {
                outcome.status = StageStatus::cached;
            } else {
                fs::remove(manifest_path);
                outcome.summary = plan.run();
                ordered_json manifest;
                manifest["stage"] = name;
                manifest["key"] = key;
                for (const auto& out : plan.outputs) manifest["outputs"][out.filename().string()] = file_hash(out);
                manifest["summary"] = outcome.summary;
                write_json(manifest_path, manifest);
            }
            if (log) {
                *log << "stage " << name << ": " << (cached ? "cached" : "ran") << " - " << outcome.summary << '\n';
            }
            report.stages.push_back(std::move(outcome));
        } catch (const Error& e) {
            throw Error(e.kind(), "stage " + name + ": " + e.what());
        } catch (const fs::filesystem_error& e) {
            throw data_error("stage " + name + ": " + e.what());
        }
    }
    return report;
}

namespace {

struct Series {
    std::string metric;
    std::vector<std::array<double, 3>> points;  // step, tokens_seen, value
};

void write_series(const fs::path& path, const std::string& x_name, const Series& s, std::size_t x_index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << x_name << ',' << s.metric << '\n';
    char buf[96];
    for (const auto& p : s.points) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g\n", static_cast<unsigned long long>(p[x_index]), p[2]);
        out << buf;
    }
}

void write_svg(const fs::path& path, const std::string& title, const std::vector<const Series*>& series) {
    constexpr double W = 640, H = 400, M = 48;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool any = false;
    for (const auto* s : series) {
        for (const auto& p : s->points) {
            if (!any) {
                x0 = x1 = p[0];
                y0 = y1 = p[2];
                any = true;
            }
            x0 = std::min(x0, p[0]);
            x1 = std::max(x1, p[0]);
            y0 = std::min(y0, p[2]);
            y1 = std::max(y1, p[2]);
        }
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << M << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    out << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\"" << H - 2 * M
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
    char buf[64];
    for (std::size_t i = 0; i < series.size(); ++i) {
        out << "<polyline fill=\"none\" stroke=\"" << colors[i % 3] << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : series[i]->points) {
            const double x = M + (p[0] - x0) / (x1 - x0) * (W - 2 * M);
            const double y = H - M - (p[2] - y0) / (y1 - y0) * (H - 2 * M);
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x, y);
            out << buf;
        }
        out << "\"/>\n";
        out << "<text x=\"" << W - M - 120 << "\" y=\"" << M + 16 * (i + 1) << "\" font-family=\"sans-serif\" "
            << "font-size=\"12\" fill=\"" << colors[i % 3] << "\">" << series[i]->metric << "</text>\n";
    }
    std::snprintf(buf, sizeof buf, "%.4g", y0);
    out << "<text x=\"4\" y=\"" << H - M << "\" font-size=\"10\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", y1);
    out << "<text x=\"4\" y=\"" << M + 10 << "\" font-size=\"10\">" << buf << "</text>\n";
    out << "</svg>\n";
}

}  // namespace

CurveFiles emit_curves(const fs::path& log_csv, const fs::path& out_dir, std::optional<std::uint64_t> tokens_per_step,
                       bool svg) {
    const auto rows = train::read_log_csv(log_csv);
    // Data lines start at line 2 (after the header); blank lines are not
    // expected in logs we write.
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t line = i + 2;
        if (i > 0 && rows[i].step <= rows[i - 1].step) {
            throw data_error("line " + std::to_string(line) + ": step " + std::to_string(rows[i].step) +
                             " does not increase");
        }
        if (!tokens_per_step && rows[i].step > 0) {
            if (rows[i].tokens_seen % rows[i].step != 0) {
                throw data_error("line " + std::to_string(line) + ": tokens_seen is not a multiple of step");
            }
            tokens_per_step = rows[i].tokens_seen / rows[i].step;
        }
        if (tokens_per_step && rows[i].tokens_seen != rows[i].step * *tokens_per_step) {
            throw data_error("line " + std::to_string(line) + ": tokens_seen " + std::to_string(rows[i].tokens_seen) +
                             " != step * " + std::to_string(*tokens_per_step));
        }
    }
    fs::create_directories(out_dir);
    Series train_loss{"train_loss", {}}, val_loss{"val_loss", {}}, l2{"param_l2", {}};
    for (const auto& r : rows) {
        const double s = static_cast<double>(r.step);
        const double t = static_cast<double>(r.tokens_seen);
        train_loss.points.push_back({s, t, r.train_loss});
        if (r.val_loss) val_loss.points.push_back({s, t, *r.val_loss});
        l2.points.push_back({s, t, r.param_l2});
    }
    CurveFiles files;
    files.rows = rows.size();
    for (const Series* s : {&train_loss, &val_loss, &l2}) {
        const fs::path by_step = out_dir / (s->metric + "_vs_step.csv");
        const fs::path by_tokens = out_dir / (s->metric + "_vs_tokens.csv");
        write_series(by_step, "step", *s, 0);
        write_series(by_tokens, "tokens_seen", *s, 1);
        files.files.push_back(by_step);
        files.files.push_back(by_tokens);
    }
    if (svg) {
        write_svg(out_dir / "loss.svg", "loss vs step", {&train_loss, &val_loss});
        write_svg(out_dir / "param_l2.svg", "parameter L2 norm vs step", {&l2});
        files.files.push_back(out_dir / "loss.svg");
        files.files.push_back(out_dir / "param_l2.svg");
    }
    return files;
}

}  // namespace forge::pipeline
