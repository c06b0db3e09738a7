// forge: command-line front end for every pipeline stage.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "forge/corpus_io.hpp"
#include "forge/dedup.hpp"
#include "forge/error.hpp"
#include "forge/mixture.hpp"
#include "forge/model.hpp"
#include "forge/ngram.hpp"
#include "forge/pipeline.hpp"
#include "forge/tokenizer.hpp"
#include "forge/trainer.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

struct Globals {
    unsigned threads = 1;
    std::uint64_t seed = 0;
    fs::path workspace = ".";
};

// Relative output paths land inside the workspace.
fs::path in_workspace(const Globals& g, const fs::path& p) {
    if (p.is_absolute() || g.workspace == ".") return p;
    return g.workspace / p;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forge: corpus filtering, dedup, tokenization, mixing and training"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--threads", g.threads, "Worker threads for parallel stages")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "Global random seed");
    app.add_option("--workspace", g.workspace, "Directory for relative outputs");

    // filter
    auto* filter = app.add_subcommand("filter", "Heuristic quality filter over a documents file");
    fs::path filter_in, filter_out, filter_rules, filter_rejects;
    bool filter_abort = false;
    filter->add_option("--in", filter_in, "Input documents (JSON lines)")->required();
    filter->add_option("--out", filter_out, "Kept documents")->required();
    filter->add_option("--rules", filter_rules, "Filter rules JSON");
    filter->add_option("--rejects", filter_rejects, "Write rejected ids with reasons (CSV)");
    filter->add_flag("--abort-on-error", filter_abort, "Stop at the first malformed line");

    // kn-train
    auto* kn_train = app.add_subcommand("kn-train", "Train a Kneser-Ney model per language");
    fs::path kn_in, kn_model;
    ngram::KnOptions kn_opts;
    kn_train->add_option("--in", kn_in, "Reference documents")->required();
    kn_train->add_option("--out", kn_model, "Model bundle output")->required();
    kn_train->add_option("--order", kn_opts.order, "N-gram order")->check(CLI::Range(1, 9));
    kn_train->add_option("--discount", kn_opts.discount, "Absolute discount in (0, 1]");

    // kn-score
    auto* kn_score = app.add_subcommand("kn-score", "Score documents by perplexity and optionally filter");
    fs::path ks_model, ks_in, ks_scores, ks_keep;
    double ks_max_ppl = 0.0, ks_percentile = 0.0;
    kn_score->add_option("--model", ks_model, "Model bundle")->required();
    kn_score->add_option("--in", ks_in, "Documents to score")->required();
    kn_score->add_option("--out", ks_scores, "Scores CSV")->required();
    kn_score->add_option("--keep-out", ks_keep, "Write documents that pass the filter");
    auto* opt_max = kn_score->add_option("--max-ppl", ks_max_ppl, "Keep documents with ppl <= value");
    auto* opt_pct = kn_score->add_option("--percentile", ks_percentile, "Keep the lowest q percent")
                        ->check(CLI::Range(0.0, 100.0));
    opt_max->excludes(opt_pct);

    // simhash
    auto* simhash_cmd = app.add_subcommand("simhash", "Compute 64-bit SimHash fingerprints");
    fs::path sh_in, sh_out;
    dedup::ShingleOptions sh_opts;
    simhash_cmd->add_option("--in", sh_in, "Documents")->required();
    simhash_cmd->add_option("--out", sh_out, "Fingerprints CSV")->required();
    simhash_cmd->add_option("--shingle-width", sh_opts.width, "Shingle width")->check(CLI::PositiveNumber);

    // dedup
    auto* dedup_cmd = app.add_subcommand("dedup", "Near-duplicate removal with band bucketing");
    fs::path dd_in, dd_out, dd_report;
    dedup::BucketingConfig dd_cfg;
    dedup::ShingleOptions dd_shingles;
    dedup_cmd->add_option("--in", dd_in, "Documents")->required();
    dedup_cmd->add_option("--out", dd_out, "Kept documents")->required();
    dedup_cmd->add_option("--report", dd_report, "Cluster report JSON");
    dedup_cmd->add_option("--bands", dd_cfg.bands, "Number of bands (divides 64)");
    dedup_cmd->add_option("--threshold", dd_cfg.hamming_threshold, "Hamming distance threshold");
    dedup_cmd->add_option("--shingle-width", dd_shingles.width, "Shingle width")->check(CLI::PositiveNumber);

    // tok-train
    auto* tok_train = app.add_subcommand("tok-train", "Train a unigram tokenizer");
    fs::path tt_in, tt_out, tt_config;
    std::size_t tt_vocab = 0;
    tok_train->add_option("--in", tt_in, "Training documents")->required();
    tok_train->add_option("--out", tt_out, "Tokenizer model JSON")->required();
    tok_train->add_option("--config", tt_config, "Tokenizer settings JSON");
    double tt_coverage = 0.0;
    std::size_t tt_max_len = 0;
    tok_train->add_option("--vocab,--vocab-size", tt_vocab, "Override vocab_size (normal plus byte pieces)");
    tok_train->add_option("--coverage", tt_coverage, "Override character coverage")->check(CLI::Range(0.0, 1.0));
    tok_train->add_option("--max-len", tt_max_len, "Override the maximum piece length in characters");

    // tok-encode
    auto* tok_encode = app.add_subcommand("tok-encode", "Encode text or documents to token ids");
    fs::path te_model, te_in, te_out;
    std::string te_text;
    tok_encode->add_option("--model", te_model, "Tokenizer model")->required();
    auto* te_in_opt = tok_encode->add_option("--in", te_in, "Documents to encode into a token file");
    auto* te_text_opt = tok_encode->add_option("--text", te_text, "Encode one string and print the ids");
    tok_encode->add_option("--out", te_out, "Token file output (with --in)");
    te_in_opt->excludes(te_text_opt);

    // tok-decode
    auto* tok_decode = app.add_subcommand("tok-decode", "Decode token ids back to text");
    fs::path td_model, td_in;
    std::string td_ids;
    tok_decode->add_option("--model", td_model, "Tokenizer model")->required();
    auto* td_in_opt = tok_decode->add_option("--in", td_in, "Token file; prints one decoded document per line");
    auto* td_ids_opt = tok_decode->add_option("--ids", td_ids, "Space-separated ids");
    td_in_opt->excludes(td_ids_opt);

    // tok-eval
    auto* tok_eval = app.add_subcommand("tok-eval", "Report tokens per character on a document set");
    fs::path tv_model, tv_in;
    tok_eval->add_option("--model", tv_model, "Tokenizer model")->required();
    tok_eval->add_option("--in", tv_in, "Documents")->required();

    // mix-validate
    auto* mix_validate = app.add_subcommand("mix-validate", "Check mixture weights and implied epochs");
    fs::path mv_spec;
    double mv_tol = 0.25;
    bool mv_strict = false;
    mix_validate->add_option("--spec", mv_spec, "Mixture JSON")->required();
    mix_validate->add_option("--tolerance", mv_tol, "Relative epoch tolerance");
    mix_validate->add_flag("--strict", mv_strict, "Exit with a data error when any check fails");

    // mix
    auto* mix_cmd = app.add_subcommand("mix", "Sample a weighted token stream from tokenized datasets");
    fs::path mx_spec, mx_tokenizer, mx_out;
    std::vector<std::string> mx_data;
    mix_cmd->add_option("--spec", mx_spec, "Mixture JSON")->required();
    mix_cmd->add_option("--tokenizer", mx_tokenizer, "Tokenizer model")->required();
    mix_cmd->add_option("--data", mx_data, "Dataset as name=documents.jsonl (repeatable)")->required();
    mix_cmd->add_option("--out", mx_out, "Token file output")->required();

    // model-init
    auto* model_init = app.add_subcommand("model-init", "Write a freshly initialized checkpoint");
    fs::path mi_config, mi_out;
    model_init->add_option("--config", mi_config, "Model config JSON (toy defaults if omitted)");
    model_init->add_option("--out", mi_out, "Checkpoint output")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the decoder on a token file");
    fs::path tr_model_cfg, tr_train_cfg, tr_data, tr_val, tr_tokenizer, tr_log, tr_ckpt_dir, tr_init;
    train_cmd->add_option("--model-config", tr_model_cfg, "Model config JSON")->required();
    train_cmd->add_option("--train-config", tr_train_cfg, "Train config JSON")->required();
    train_cmd->add_option("--data", tr_data, "Token file")->required();
    train_cmd->add_option("--val", tr_val, "Held-out documents");
    train_cmd->add_option("--tokenizer", tr_tokenizer, "Tokenizer used to pack --val");
    train_cmd->add_option("--log", tr_log, "Training log CSV")->required();
    train_cmd->add_option("--ckpt-dir", tr_ckpt_dir, "Checkpoint directory")->required();
    train_cmd->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh init");

    // curves
    auto* curves = app.add_subcommand("curves", "Turn a training log into per-metric series");
    fs::path cv_log, cv_out;
    std::uint64_t cv_tps = 0;
    bool cv_svg = false;
    curves->add_option("--log", cv_log, "Training log CSV")->required();
    curves->add_option("--out-dir", cv_out, "Output directory")->required();
    curves->add_option("--tokens-per-step", cv_tps, "Expected tokens per step (inferred if omitted)");
    curves->add_flag("--svg", cv_svg, "Also write SVG line charts");

    // pipeline
    auto* pipeline_cmd = app.add_subcommand("pipeline", "Run the staged pipeline from a config file");
    fs::path pl_config;
    pipeline_cmd->add_option("--config", pl_config, "Pipeline config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*filter) {
            const FilterRules rules = filter_rules.empty() ? FilterRules{} : load_filter_rules(filter_rules);
            rules.validate();
            auto reader = load_documents(filter_in, filter_abort ? OnRecordError::abort : OnRecordError::skip);
            const auto out_path = in_workspace(g, filter_out);
            ensure_parent(out_path);
            std::ofstream out(out_path, std::ios::binary);
            if (!out) throw data_error("cannot write " + out_path.string());
            std::ofstream rejects;
            if (!filter_rejects.empty()) {
                rejects.open(in_workspace(g, filter_rejects), std::ios::binary);
                rejects << "doc_id,reason\n";
            }
            std::size_t read = 0, kept = 0;
            while (auto doc = reader.next()) {
                ++read;
                const auto v = heuristic_filter(*doc, rules);
                if (v.keep) {
                    write_document(out, *doc);
                    ++kept;
                } else if (rejects.is_open()) {
                    rejects << doc->id << ',' << to_string(v.reason) << '\n';
                }
            }
            for (const auto& e : reader.errors()) std::cerr << "line " << e.line << ": " << e.message << '\n';
            std::cout << "kept " << kept << " of " << read << " documents, " << reader.errors().size()
                      << " malformed lines skipped\n";
        } else if (*kn_train) {
            const auto docs = read_all_documents(kn_in);
            const auto bundle = ngram::train_bundle(docs, kn_opts);
            const auto out = in_workspace(g, kn_model);
            ensure_parent(out);
            ngram::save_bundle(out, bundle);
            std::cout << "trained " << bundle.size() << " language model(s) on " << docs.size() << " documents\n";
        } else if (*kn_score) {
            const auto bundle = ngram::load_bundle(ks_model);
            const auto docs = read_all_documents(ks_in);
            std::vector<ngram::PplScore> scores;
            for (const auto& d : docs) scores.push_back(ngram::perplexity(bundle, d));
            const auto out = in_workspace(g, ks_scores);
            ensure_parent(out);
            ngram::write_scores_csv(out, scores);
            if (!ks_keep.empty()) {
                if (!*opt_max && !*opt_pct) throw usage_error("--keep-out needs --max-ppl or --percentile");
                const auto res = *opt_max ? ngram::ppl_filter(scores, ngram::PplThreshold{ks_max_ppl})
                                          : ngram::ppl_filter(scores, ngram::PplPercentile{ks_percentile});
                if (res.warning) std::cerr << "warning: " << *res.warning << '\n';
                std::vector<Document> kept;
                for (const auto& d : docs) {
                    if (res.keep.count(d.id)) kept.push_back(d);
                }
                write_documents(in_workspace(g, ks_keep), kept);
                std::cout << "kept " << kept.size() << " of " << docs.size() << " documents\n";
            } else {
                std::cout << "scored " << scores.size() << " documents\n";
            }
        } else if (*simhash_cmd) {
            const auto docs = read_all_documents(sh_in);
            std::vector<dedup::Fingerprint> fps;
            for (const auto& d : docs) fps.push_back(dedup::simhash(d, sh_opts));
            const auto out = in_workspace(g, sh_out);
            ensure_parent(out);
            dedup::write_fingerprints_csv(out, fps);
            std::cout << "fingerprinted " << fps.size() << " documents\n";
        } else if (*dedup_cmd) {
            dd_cfg.validate();
            const auto docs = read_all_documents(dd_in);
            const auto res = dedup::dedup(docs, dd_cfg, dd_shingles);
            const auto out = in_workspace(g, dd_out);
            ensure_parent(out);
            write_documents(out, res.kept);
            if (!dd_report.empty()) dedup::write_report(in_workspace(g, dd_report), res.report);
            std::cout << "kept " << res.kept.size() << " of " << docs.size() << " documents, "
                      << res.report.clusters.size() << " clusters\n";
        } else if (*tok_train) {
            auto settings = tt_config.empty() ? tok::TokenizerSettings{} : tok::load_settings(tt_config);
            if (tt_vocab) settings.vocab_size = tt_vocab;
            if (tt_coverage > 0.0) settings.coverage = tt_coverage;
            if (tt_max_len) settings.max_piece_chars = tt_max_len;
            const auto docs = read_all_documents(tt_in);
            const auto model = tok::train_unigram(docs, settings);
            const auto out = in_workspace(g, tt_out);
            ensure_parent(out);
            tok::save_model(out, model);
            std::cout << "trained " << model.pieces().size() << "-piece tokenizer, "
                      << fmt_double(tok::compression_rate(model, docs)) << " tokens per character\n";
        } else if (*tok_encode) {
            const auto model = tok::load_model(te_model);
            if (*te_text_opt) {
                const auto ids = tok::encode(model, te_text);
                for (std::size_t i = 0; i < ids.size(); ++i) std::cout << (i ? " " : "") << ids[i];
                std::cout << '\n';
            } else if (*te_in_opt) {
                if (te_out.empty()) throw usage_error("--in requires --out");
                const auto docs = read_all_documents(te_in);
                mix::TokenFile file;
                std::map<std::string, std::size_t> source_index;
                for (const auto& d : docs) {
                    auto [it, fresh] = source_index.emplace(d.source, file.sources.size());
                    if (fresh) file.sources.push_back(d.source);
                    file.docs.push_back({it->second, tok::encode(model, d.text)});
                }
                const auto out = in_workspace(g, te_out);
                ensure_parent(out);
                mix::write_token_file(out, file);
                std::cout << "encoded " << docs.size() << " documents\n";
            } else {
                throw usage_error("tok-encode needs --text or --in");
            }
        } else if (*tok_decode) {
            const auto model = tok::load_model(td_model);
            if (*td_ids_opt) {
                std::istringstream in(td_ids);
                std::vector<tok::TokenId> ids;
                std::string word;
                while (in >> word) {
                    try {
                        ids.push_back(static_cast<tok::TokenId>(std::stol(word)));
                    } catch (const std::exception&) {
                        throw usage_error("bad token id '" + word + "'");
                    }
                }
                std::cout << tok::decode(model, ids) << '\n';
            } else if (*td_in_opt) {
                for (const auto& d : mix::read_token_file(td_in).docs) std::cout << tok::decode(model, d.tokens) << '\n';
            } else {
                throw usage_error("tok-decode needs --ids or --in");
            }
        } else if (*tok_eval) {
            const auto model = tok::load_model(tv_model);
            const auto docs = read_all_documents(tv_in);
            std::vector<Document> en, zh;
            for (const auto& d : docs) (d.lang == Lang::en ? en : zh).push_back(d);
            std::cout << "vocab " << model.pieces().size() << " pieces (" << model.id_count() << " ids)\n";
            std::cout << "all: " << fmt_double(tok::compression_rate(model, docs)) << " tokens/char\n";
            if (!en.empty()) std::cout << "en: " << fmt_double(tok::compression_rate(model, en)) << " tokens/char\n";
            if (!zh.empty()) std::cout << "zh: " << fmt_double(tok::compression_rate(model, zh)) << " tokens/char\n";
        } else if (*mix_validate) {
            const auto spec = mix::load_mixture_spec(mv_spec);
            const auto rep = mix::validate_mixture(spec, mv_tol);
            std::cout << "weight sum " << fmt_double(rep.weight_sum) << (rep.weights_sum_to_one ? " ok" : " FAIL")
                      << '\n';
            for (const auto& e : rep.epochs) {
                std::printf("%-24s stated %8.4f implied %8.4f deviation %6.1f%% %s\n", e.name.c_str(), e.stated,
                            e.implied, 100.0 * e.relative_deviation, e.within_tolerance ? "ok" : "FAIL");
            }
            for (const auto& f : rep.findings) std::cout << "finding: " << f << '\n';
            if (mv_strict && !rep.ok()) return 2;
        } else if (*mix_cmd) {
            const auto spec = mix::load_mixture_spec(mx_spec);
            const auto model = tok::load_model(mx_tokenizer);
            std::map<std::string, std::vector<mix::TokenDoc>> datasets;
            for (const auto& item : mx_data) {
                const auto eq = item.find('=');
                if (eq == std::string::npos || eq == 0) throw usage_error("--data expects name=path, got " + item);
                auto& bucket = datasets[item.substr(0, eq)];
                for (const auto& d : read_all_documents(item.substr(eq + 1))) bucket.push_back(tok::encode(model, d.text));
            }
            mix::TokenFile file;
            for (const auto& e : spec.entries) file.sources.push_back(e.name);
            file.docs = mix::sample_stream(spec, datasets, g.seed);
            const auto out = in_workspace(g, mx_out);
            ensure_parent(out);
            mix::write_token_file(out, file);
            std::cout << "sampled " << file.docs.size() << " documents, " << spec.total_training_tokens << " tokens\n";
        } else if (*model_init) {
            const auto cfg = mi_config.empty() ? nn::ModelConfig::toy() : nn::load_model_config(mi_config);
            const auto params = nn::init_params(cfg, g.seed);
            const auto out = in_workspace(g, mi_out);
            ensure_parent(out);
            nn::save_checkpoint(out, params);
            std::cout << "initialized " << params.scalar_count() << " parameters\n";
        } else if (*train_cmd) {
            const auto mcfg = nn::load_model_config(tr_model_cfg);
            auto tcfg = train::load_train_config(tr_train_cfg);
            if (g.threads > 1) tcfg.threads = g.threads;
            mix::SequencePacker packer(tcfg.sequence_length, tok::kEosId);
            for (const auto& d : mix::read_token_file(tr_data).docs) packer.push(d.tokens);
            const auto data = packer.take();
            std::vector<train::Sequence> val;
            if (!tr_val.empty()) {
                if (tr_tokenizer.empty()) throw usage_error("--val requires --tokenizer");
                val = train::pack_validation(read_all_documents(tr_val), tok::load_model(tr_tokenizer),
                                             tcfg.sequence_length);
            }
            auto params = tr_init.empty() ? nn::init_params(mcfg, g.seed) : nn::load_checkpoint(tr_init);
            if (!(params.config == mcfg)) throw usage_error("--init checkpoint does not match --model-config");
            const auto log_path = in_workspace(g, tr_log);
            const auto ckpt_dir = in_workspace(g, tr_ckpt_dir);
            ensure_parent(log_path);
            fs::create_directories(ckpt_dir);
            std::ofstream log(log_path, std::ios::binary);
            if (!log) throw data_error("cannot write " + log_path.string());
            train::write_log_header(log);
            train::TrainHooks hooks;
            hooks.on_log = [&](const train::TrainLogRow& row) {
                train::write_log_row(log, row);
                log.flush();
                std::cerr << "step " << row.step << " loss " << fmt_double(row.train_loss) << '\n';
            };
            hooks.on_checkpoint = [&](std::uint64_t step, const nn::Params& p) {
                nn::save_checkpoint(ckpt_dir / ("step_" + std::to_string(step) + ".ckpt"), p);
            };
            const auto result = train::train(std::move(params), tcfg, data, val, hooks);
            nn::save_checkpoint(ckpt_dir / "final.ckpt", result.params);
            std::cout << "trained " << tcfg.total_steps << " steps, final train_loss "
                      << fmt_double(result.log.back().train_loss) << '\n';
        } else if (*curves) {
            const auto res = pipeline::emit_curves(cv_log, in_workspace(g, cv_out),
                                                   cv_tps ? std::optional<std::uint64_t>(cv_tps) : std::nullopt, cv_svg);
            std::cout << "wrote " << res.files.size() << " files for " << res.rows << " rows\n";
        } else if (*pipeline_cmd) {
            auto cfg = pipeline::load_pipeline_config(pl_config);
            if (app.get_option("--workspace")->count()) cfg.workspace = g.workspace;
            if (app.get_option("--seed")->count()) cfg.seed = g.seed;
            if (app.get_option("--threads")->count()) cfg.threads = g.threads;
            pipeline::run_pipeline(cfg, &std::cout);
        }
    } catch (const Error& e) {
        std::cerr << "forge: " << e.what() << '\n';
        switch (e.kind()) {
            case ErrorKind::usage: return 1;
            case ErrorKind::data: return 2;
            case ErrorKind::internal: return 3;
        }
    } catch (const std::exception& e) {
        std::cerr << "forge: internal error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
