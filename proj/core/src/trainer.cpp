#include "forge/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <type_traits>
#include <unordered_set>

#include "forge/error.hpp"
#include "forge/mixture.hpp"

namespace forge::train {

void TrainConfig::validate() const {
    if (!(lr_min > 0.0 && lr_min <= lr_max)) throw usage_error("train config requires 0 < lr_min <= lr_max");
    if (warmup_steps >= total_steps) throw usage_error("warmup_steps must be < total_steps");
    if (micro_batch < 1 || grad_accum < 1 || ranks < 1 || total_steps < 1 || log_interval < 1) {
        throw usage_error("train config counts must be >= 1");
    }
    if (!(clip_norm > 0.0)) throw usage_error("clip_norm must be > 0");
    if (weight_decay < 0.0) throw usage_error("weight_decay must be >= 0");
    if (threads < 1) throw usage_error("threads must be >= 1");
    if (sequence_length < 2) throw usage_error("sequence_length must be >= 2");
}

TrainConfig TrainConfig::xmodel() {
    TrainConfig c;
    c.ranks = 7;
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open train config " + path.string());
    TrainConfig c;
    try {
        const auto j = nlohmann::json::parse(in);
        c.lr_max = j.value("lr_max", c.lr_max);
        c.lr_min = j.value("lr_min", c.lr_min);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.total_steps = j.value("total_steps", c.total_steps);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.micro_batch = j.value("micro_batch", c.micro_batch);
        c.grad_accum = j.value("grad_accum", c.grad_accum);
        c.ranks = j.value("ranks", c.ranks);
        c.sequence_length = j.value("sequence_length", c.sequence_length);
        if (j.contains("betas")) {
            c.beta1 = j.at("betas").at(0).get<double>();
            c.beta2 = j.at("betas").at(1).get<double>();
        }
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.seed = j.value("seed", c.seed);
        c.log_interval = j.value("log_interval", c.log_interval);
        c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw usage_error("bad train config " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

void save_train_config(const std::filesystem::path& path, const TrainConfig& c) {
    nlohmann::ordered_json j = {{"lr_max", c.lr_max},
                                {"lr_min", c.lr_min},
                                {"warmup_steps", c.warmup_steps},
                                {"total_steps", c.total_steps},
                                {"weight_decay", c.weight_decay},
                                {"clip_norm", c.clip_norm},
                                {"micro_batch", c.micro_batch},
                                {"grad_accum", c.grad_accum},
                                {"ranks", c.ranks},
                                {"sequence_length", c.sequence_length},
                                {"betas", {c.beta1, c.beta2}},
                                {"adam_eps", c.adam_eps},
                                {"seed", c.seed},
                                {"log_interval", c.log_interval},
                                {"checkpoint_interval", c.checkpoint_interval},
                                {"threads", c.threads}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

double lr_at(std::uint64_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps) {
        throw usage_error("step " + std::to_string(step) + " is past total_steps " + std::to_string(cfg.total_steps));
    }
    if (step < cfg.warmup_steps) {
        return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::uint64_t tokens_seen(std::uint64_t step, const TrainConfig& cfg, std::uint64_t sequence_length) {
    return step * mix::batch_plan(cfg.micro_batch, cfg.grad_accum, cfg.ranks, sequence_length).tokens_per_step();
}

double global_norm(const Params& grads) {
    double sum = 0.0;
    for (const auto& r : grads.tensors()) {
        for (double g : r.tensor->data) sum += g * g;
    }
    return std::sqrt(sum);
}

double clip_grads(Params& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) throw usage_error("clip_norm must be > 0");
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw data_error("non_finite_gradient: global gradient norm is not finite");
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (auto& r : grads.tensors()) {
            for (double& g : r.tensor->data) g *= scale;
        }
    }
    return norm;
}

OptimizerState OptimizerState::zeros(const nn::ModelConfig& cfg) {
    return {Params::zeros(cfg), Params::zeros(cfg), 0};
}

void adamw_step(Params& params, const Params& grads, OptimizerState& state, double lr, const TrainConfig& cfg) {
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
        throw usage_error("adamw_step: parameter/gradient structure mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].tensor->shape != g[i].tensor->shape || p[i].tensor->shape != m[i].tensor->shape ||
            p[i].tensor->shape != v[i].tensor->shape) {
            throw usage_error("adamw_step: shape mismatch in " + p[i].name);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double decay = p[i].is_norm_gain ? 0.0 : cfg.weight_decay;
        auto& theta = p[i].tensor->data;
        const auto& grad = g[i].tensor->data;
        auto& m1 = m[i].tensor->data;
        auto& m2 = v[i].tensor->data;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
            m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            const double m_hat = m1[k] / bc1;
            const double v_hat = m2[k] / bc2;
            theta[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + decay * theta[k]);
        }
    }
}

double param_l2_norm(const Params& params) { return global_norm(params); }

void write_log_header(std::ostream& out) { out << kLogHeader << '\n'; }

void write_log_row(std::ostream& out, const TrainLogRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,", static_cast<unsigned long long>(row.step),
                  static_cast<unsigned long long>(row.tokens_seen), row.lr, row.train_loss);
    out << buf;
    if (row.val_loss) {
        std::snprintf(buf, sizeof buf, "%.17g", *row.val_loss);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", row.param_l2);
    out << buf;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    for (char c : line) {
        if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

template <typename T>
T parse_field(const std::string& field, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        T v;
        if constexpr (std::is_same_v<T, double>) {
            v = std::stod(field, &used);
        } else {
            if (!field.empty() && field[0] == '-') throw std::invalid_argument("negative");
            v = std::stoull(field, &used);
        }
        if (used != field.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw data_error("line " + std::to_string(line_no) + ": bad " + what + " value '" + field + "'");
    }
}

}  // namespace

std::vector<TrainLogRow> read_log_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("line 1: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kLogHeader) throw data_error("line 1: unexpected header '" + line + "'");
    std::vector<TrainLogRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) {
            throw data_error("line " + std::to_string(line_no) + ": expected 6 fields, got " + std::to_string(f.size()));
        }
        TrainLogRow r;
        r.step = parse_field<std::uint64_t>(f[0], line_no, "step");
        r.tokens_seen = parse_field<std::uint64_t>(f[1], line_no, "tokens_seen");
        r.lr = parse_field<double>(f[2], line_no, "lr");
        r.train_loss = parse_field<double>(f[3], line_no, "train_loss");
        if (!f[4].empty()) r.val_loss = parse_field<double>(f[4], line_no, "val_loss");
        r.param_l2 = parse_field<double>(f[5], line_no, "param_l2");
        rows.push_back(r);
    }
    return rows;
}

std::vector<TrainLogRow> read_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open training log " + path.string());
    return read_log_csv(in);
}

void split_sequence(const Sequence& seq, Sequence& inputs, Sequence& targets) {
    if (seq.size() < 2) throw usage_error("training sequences need at least two tokens");
    inputs.assign(seq.begin(), seq.end() - 1);
    targets.assign(seq.begin() + 1, seq.end());
}

double validate(const Params& params, const std::vector<Sequence>& sequences) {
    if (sequences.empty()) throw data_error("validation set is empty");
    double total = 0.0;
    Sequence inputs, targets;
    for (const auto& s : sequences) {
        split_sequence(s, inputs, targets);
        total += nn::lm_loss(nn::forward(params, inputs), targets);
    }
    return total / static_cast<double>(sequences.size());
}

std::vector<Sequence> pack_validation(const std::vector<Document>& docs, const tok::TokenizerModel& tokenizer,
                                      std::size_t sequence_length) {
    if (sequence_length < 2) throw usage_error("sequence_length must be >= 2");
    std::vector<nn::TokenId> all;
    for (const auto& d : docs) {
        const auto ids = tok::encode(tokenizer, d.text);
        all.insert(all.end(), ids.begin(), ids.end());
        all.push_back(tok::kEosId);
    }
    std::vector<Sequence> seqs;
    std::size_t pos = 0;
    for (; pos + sequence_length <= all.size(); pos += sequence_length) {
        seqs.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(pos),
                          all.begin() + static_cast<std::ptrdiff_t>(pos + sequence_length));
    }
    // Short validation sets still count: keep the tail if it holds a target.
    if (all.size() - pos >= 2) seqs.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(pos), all.end());
    return seqs;
}

double validate_docs(const Params& params, const std::vector<Document>& docs, const tok::TokenizerModel& tokenizer,
                     std::size_t sequence_length) {
    return validate(params, pack_validation(docs, tokenizer, sequence_length));
}

void check_disjoint(const std::vector<Document>& train_docs, const std::vector<Document>& val_docs) {
    std::unordered_set<std::string> ids;
    for (const auto& d : train_docs) ids.insert(d.id);
    for (const auto& d : val_docs) {
        if (ids.count(d.id)) throw usage_error("validation document '" + d.id + "' also appears in training data");
    }
}

namespace {

void add_into(Params& dst, const Params& src) {
    auto a = dst.tensors();
    const auto b = src.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto& x = a[i].tensor->data;
        const auto& y = b[i].tensor->data;
        for (std::size_t k = 0; k < x.size(); ++k) x[k] += y[k];
    }
}

// Accumulates `scale`-weighted gradients of a micro-batch into `grads`.
// Worker partial sums are added back in worker order.
double micro_batch_gradients(const Params& params, const std::vector<const Sequence*>& seqs, double scale,
                             unsigned threads, Params& grads) {
    const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(seqs.size())));
    if (workers == 1) {
        double loss = 0.0;
        Sequence inputs, targets;
        for (const auto* s : seqs) {
            split_sequence(*s, inputs, targets);
            loss += scale * nn::accumulate_gradients(params, inputs, targets, scale, grads);
        }
        return loss;
    }
    std::vector<Params> partial(workers, Params::zeros(params.config));
    std::vector<double> losses(workers, 0.0);
    std::vector<std::exception_ptr> failures(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                Sequence inputs, targets;
                for (std::size_t i = w; i < seqs.size(); i += workers) {
                    split_sequence(*seqs[i], inputs, targets);
                    losses[w] += scale * nn::accumulate_gradients(params, inputs, targets, scale, partial[w]);
                }
            } catch (...) {
                failures[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }
    double loss = 0.0;
    for (unsigned w = 0; w < workers; ++w) {
        add_into(grads, partial[w]);
        loss += losses[w];
    }
    return loss;
}

}  // namespace

StepResult train_step(Params& params, OptimizerState& state, const std::vector<Sequence>& batch,
                      const TrainConfig& cfg, double lr) {
    const std::uint64_t windows = cfg.grad_accum * cfg.ranks;
    if (batch.size() != cfg.micro_batch * windows) {
        throw usage_error("train_step expects " + std::to_string(cfg.micro_batch * windows) + " sequences");
    }
    Params grads = Params::zeros(params.config);
    // Loss and gradient are means over micro-batches of per-micro-batch means.
    const double scale = 1.0 / static_cast<double>(windows) / static_cast<double>(cfg.micro_batch);
    StepResult r;
    std::vector<const Sequence*> micro;
    for (std::uint64_t w = 0; w < windows; ++w) {
        micro.clear();
        for (std::uint64_t i = 0; i < cfg.micro_batch; ++i) micro.push_back(&batch[w * cfg.micro_batch + i]);
        r.loss += micro_batch_gradients(params, micro, scale, cfg.threads, grads);
    }
    if (!std::isfinite(r.loss)) return r;
    r.grad_norm = clip_grads(grads, cfg.clip_norm);
    adamw_step(params, grads, state, lr, cfg);
    return r;
}

TrainResult train(Params params, const TrainConfig& cfg, const std::vector<Sequence>& data,
                  const std::vector<Sequence>& val, const TrainHooks& hooks) {
    cfg.validate();
    if (data.empty()) throw data_error("no training sequences");
    const std::uint64_t seq_len = cfg.sequence_length;
    for (const auto& s : data) {
        if (s.size() != seq_len) {
            throw data_error("training sequence of length " + std::to_string(s.size()) + " but sequence_length is " +
                             std::to_string(seq_len));
        }
    }
    if (seq_len - 1 > params.config.context_len) {
        throw usage_error("sequence_length exceeds the model context length + 1");
    }
    TrainResult result;
    OptimizerState state = OptimizerState::zeros(params.config);
    std::size_t cursor = 0;
    std::vector<Sequence> batch(cfg.sequences_per_step());
    double window_loss = 0.0;
    std::uint64_t window_steps = 0;
    for (std::uint64_t step = 1; step <= cfg.total_steps; ++step) {
        for (auto& s : batch) {
            s = data[cursor];
            cursor = (cursor + 1) % data.size();
        }
        const double lr = lr_at(step, cfg);
        const StepResult sr = train_step(params, state, batch, cfg, lr);
        window_loss += sr.loss;
        ++window_steps;
        const bool finite = std::isfinite(sr.loss);
        if (!finite || step % cfg.log_interval == 0 || step == cfg.total_steps) {
            TrainLogRow row;
            row.step = step;
            row.tokens_seen = tokens_seen(step, cfg, seq_len);
            row.lr = lr;
            row.train_loss = finite ? window_loss / static_cast<double>(window_steps) : sr.loss;
            if (finite && !val.empty()) row.val_loss = validate(params, val);
            row.param_l2 = param_l2_norm(params);
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
            if (!finite) throw data_error("non-finite training loss at step " + std::to_string(step));
            window_loss = 0.0;
            window_steps = 0;
        }
        if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
            hooks.on_checkpoint(step, params);
        }
    }
    result.params = std::move(params);
    return result;
}

}  // namespace forge::train
