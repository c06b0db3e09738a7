#include "forge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "forge/error.hpp"

namespace forge::nn {
namespace {

// y (rows x out) = x (rows x in) * w (in x out); y is overwritten.
void matmul(const double* x, const double* w, double* y, std::size_t rows, std::size_t in, std::size_t out) {
    std::fill(y, y + rows * out, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * in;
        double* yr = y + r * out;
        for (std::size_t k = 0; k < in; ++k) {
            const double a = xr[k];
            const double* wk = w + k * out;
            for (std::size_t c = 0; c < out; ++c) yr[c] += a * wk[c];
        }
    }
}

// dx (rows x in) += dy (rows x out) * w^T
void matmul_bt_acc(const double* dy, const double* w, double* dx, std::size_t rows, std::size_t in, std::size_t out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * out;
        double* dxr = dx + r * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double* wk = w + k * out;
            double s = 0.0;
            for (std::size_t c = 0; c < out; ++c) s += dyr[c] * wk[c];
            dxr[k] += s;
        }
    }
}

// dw (in x out) += scale * x^T (in x rows) * dy (rows x out)
void matmul_at_acc(const double* x, const double* dy, double* dw, std::size_t rows, std::size_t in, std::size_t out,
                   double scale) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * in;
        const double* dyr = dy + r * out;
        for (std::size_t k = 0; k < in; ++k) {
            const double a = scale * xr[k];
            double* dwk = dw + k * out;
            for (std::size_t c = 0; c < out; ++c) dwk[c] += a * dyr[c];
        }
    }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Row-wise RMSNorm; stores 1/rms per row.
void rmsnorm_rows(const double* x, const double* g, double* y, double* inv_rms, std::size_t rows, std::size_t d,
                  double eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * d;
        double ms = 0.0;
        for (std::size_t i = 0; i < d; ++i) ms += xr[i] * xr[i];
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
        inv_rms[r] = inv;
        for (std::size_t i = 0; i < d; ++i) y[r * d + i] = g[i] * xr[i] * inv;
    }
}

// dx += dL/dx, dg += scale * dL/dg for y = g * x * inv_rms.
void rmsnorm_rows_backward(const double* x, const double* g, const double* inv_rms, const double* dy, double* dx,
                           double* dg, std::size_t rows, std::size_t d, double scale) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * d;
        const double* dyr = dy + r * d;
        const double inv = inv_rms[r];
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += dyr[i] * g[i] * xr[i];
            dg[i] += scale * dyr[i] * xr[i] * inv;
        }
        const double k = inv * inv * inv * dot / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += inv * g[i] * dyr[i] - k * xr[i];
    }
}

struct RopeTable {
    // cos/sin per (position, pair)
    std::vector<double> cos;
    std::vector<double> sin;
    std::size_t pairs = 0;

    RopeTable(std::size_t positions, std::size_t head_dim, double base) : pairs(head_dim / 2) {
        cos.resize(positions * pairs);
        sin.resize(positions * pairs);
        for (std::size_t m = 0; m < positions; ++m) {
            for (std::size_t i = 0; i < pairs; ++i) {
                const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
                const double angle = static_cast<double>(m) * theta;
                cos[m * pairs + i] = std::cos(angle);
                sin[m * pairs + i] = std::sin(angle);
            }
        }
    }

    // direction = +1 rotates forward, -1 applies the transpose (used in backward).
    void apply(double* v, std::size_t m, double direction) const {
        for (std::size_t i = 0; i < pairs; ++i) {
            const double c = cos[m * pairs + i];
            const double s = direction * sin[m * pairs + i];
            const double a = v[2 * i];
            const double b = v[2 * i + 1];
            v[2 * i] = a * c - b * s;
            v[2 * i + 1] = a * s + b * c;
        }
    }
};

struct LayerCache {
    std::vector<double> h_in, xn, inv_rms, q, k, v, probs, attn, h_mid, xn2, inv_rms2, gate, up, act;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    std::vector<double> h_out, xn_final, inv_rms_final;
};

void check_inputs(const ModelConfig& cfg, std::span<const TokenId> ids) {
    if (ids.empty()) throw usage_error("forward needs at least one token");
    if (ids.size() > cfg.context_len) {
        throw usage_error("sequence of " + std::to_string(ids.size()) + " tokens exceeds context length " +
                          std::to_string(cfg.context_len));
    }
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw usage_error("token id " + std::to_string(id) + " outside the vocabulary");
        }
    }
}

// Attention core for one layer given rotated q, k and v. Writes the
// pre-projection output `attn` (L x d) and the probabilities (H x L x L).
void attention_core(const ModelConfig& cfg, std::size_t len, const double* q, const double* k, const double* v,
                    double* probs, double* attn) {
    const std::size_t d = cfg.hidden_size;
    const std::size_t hd = cfg.head_dim();
    const std::size_t kvd = cfg.kv_dim();
    const std::size_t group = cfg.group_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::fill(attn, attn + len * d, 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t kvh = h / group;
        double* p = probs + h * len * len;
        for (std::size_t t = 0; t < len; ++t) {
            double* row = p + t * len;
            const double* qt = q + t * d + h * hd;
            double mx = -INFINITY;
            for (std::size_t u = 0; u <= t; ++u) {
                const double* ku = k + u * kvd + kvh * hd;
                double s = 0.0;
                for (std::size_t i = 0; i < hd; ++i) s += qt[i] * ku[i];
                row[u] = s * scale;
                mx = std::max(mx, row[u]);
            }
            double z = 0.0;
            for (std::size_t u = 0; u <= t; ++u) {
                row[u] = std::exp(row[u] - mx);
                z += row[u];
            }
            for (std::size_t u = 0; u <= t; ++u) row[u] /= z;
            for (std::size_t u = t + 1; u < len; ++u) row[u] = 0.0;
            double* out = attn + t * d + h * hd;
            for (std::size_t u = 0; u <= t; ++u) {
                const double* vu = v + u * kvd + kvh * hd;
                for (std::size_t i = 0; i < hd; ++i) out[i] += row[u] * vu[i];
            }
        }
    }
}

std::vector<double> run_forward(const Params& params, std::span<const TokenId> ids, ForwardCache& cache) {
    const ModelConfig& cfg = params.config;
    check_inputs(cfg, ids);
    const std::size_t len = ids.size();
    const std::size_t d = cfg.hidden_size;
    const std::size_t f = cfg.intermediate_size;
    const std::size_t kvd = cfg.kv_dim();
    const std::size_t hd = cfg.head_dim();
    const RopeTable rope_table(len, hd, cfg.rope_base);

    std::vector<double> h(len * d);
    for (std::size_t t = 0; t < len; ++t) {
        std::copy_n(params.embedding.data.data() + static_cast<std::size_t>(ids[t]) * d, d, h.data() + t * d);
    }
    cache.layers.resize(cfg.n_layers);
    std::vector<double> tmp(len * d);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = params.layers[l];
        LayerCache& c = cache.layers[l];
        c.h_in = h;
        c.xn.resize(len * d);
        c.inv_rms.resize(len);
        rmsnorm_rows(h.data(), lp.attn_norm.data.data(), c.xn.data(), c.inv_rms.data(), len, d, cfg.norm_eps);
        c.q.resize(len * d);
        c.k.resize(len * kvd);
        c.v.resize(len * kvd);
        matmul(c.xn.data(), lp.wq.data.data(), c.q.data(), len, d, d);
        matmul(c.xn.data(), lp.wk.data.data(), c.k.data(), len, d, kvd);
        matmul(c.xn.data(), lp.wv.data.data(), c.v.data(), len, d, kvd);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) rope_table.apply(c.q.data() + t * d + hh * hd, t, 1.0);
            for (std::size_t hh = 0; hh < cfg.n_kv_heads; ++hh) rope_table.apply(c.k.data() + t * kvd + hh * hd, t, 1.0);
        }
        c.probs.resize(cfg.n_heads * len * len);
        c.attn.resize(len * d);
        attention_core(cfg, len, c.q.data(), c.k.data(), c.v.data(), c.probs.data(), c.attn.data());
        matmul(c.attn.data(), lp.wo.data.data(), tmp.data(), len, d, d);
        for (std::size_t i = 0; i < len * d; ++i) h[i] += tmp[i];

        c.h_mid = h;
        c.xn2.resize(len * d);
        c.inv_rms2.resize(len);
        rmsnorm_rows(h.data(), lp.ffn_norm.data.data(), c.xn2.data(), c.inv_rms2.data(), len, d, cfg.norm_eps);
        c.gate.resize(len * f);
        c.up.resize(len * f);
        c.act.resize(len * f);
        matmul(c.xn2.data(), lp.w_gate.data.data(), c.gate.data(), len, d, f);
        matmul(c.xn2.data(), lp.w_up.data.data(), c.up.data(), len, d, f);
        for (std::size_t i = 0; i < len * f; ++i) c.act[i] = silu(c.gate[i]) * c.up[i];
        matmul(c.act.data(), lp.w_down.data.data(), tmp.data(), len, f, d);
        for (std::size_t i = 0; i < len * d; ++i) h[i] += tmp[i];
    }
    cache.h_out = h;
    cache.xn_final.resize(len * d);
    cache.inv_rms_final.resize(len);
    rmsnorm_rows(h.data(), params.final_norm.data.data(), cache.xn_final.data(), cache.inv_rms_final.data(), len, d,
                 cfg.norm_eps);
    std::vector<double> logits(len * cfg.vocab_size);
    matmul(cache.xn_final.data(), params.output.data.data(), logits.data(), len, d, cfg.vocab_size);
    return logits;
}

// Writes d(loss)/d(logits) into `dlogits`; returns the loss.
double loss_and_grad(const double* logits, std::size_t len, std::size_t vocab, std::span<const TokenId> targets,
                     double* dlogits) {
    std::size_t counted = 0;
    for (std::size_t t = 0; t < len; ++t) counted += targets[t] >= 0 ? 1 : 0;
    if (counted == 0) {
        if (dlogits) std::fill(dlogits, dlogits + len * vocab, 0.0);
        return 0.0;
    }
    const double inv_n = 1.0 / static_cast<double>(counted);
    double loss = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
        const double* row = logits + t * vocab;
        double* drow = dlogits ? dlogits + t * vocab : nullptr;
        if (targets[t] < 0) {
            if (drow) std::fill(drow, drow + vocab, 0.0);
            continue;
        }
        const double mx = *std::max_element(row, row + vocab);
        double z = 0.0;
        for (std::size_t i = 0; i < vocab; ++i) z += std::exp(row[i] - mx);
        const double log_z = std::log(z);
        loss -= (row[targets[t]] - mx - log_z);
        if (drow) {
            for (std::size_t i = 0; i < vocab; ++i) drow[i] = std::exp(row[i] - mx - log_z) * inv_n;
            drow[targets[t]] -= inv_n;
        }
    }
    return loss * inv_n;
}

void check_targets(std::span<const TokenId> ids, std::span<const TokenId> targets, std::size_t vocab) {
    if (targets.size() != ids.size()) throw usage_error("targets must have one entry per input position");
    for (TokenId t : targets) {
        if (t >= 0 && static_cast<std::size_t>(t) >= vocab) throw usage_error("target id outside the vocabulary");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (hidden_size == 0 || n_heads == 0 || n_kv_heads == 0 || n_layers == 0 || vocab_size == 0 || context_len == 0) {
        throw usage_error("model dimensions must be positive");
    }
    if (hidden_size % n_heads != 0) throw usage_error("hidden_size must be divisible by n_heads");
    if (n_heads % n_kv_heads != 0) throw usage_error("n_heads must be divisible by n_kv_heads");
    if (head_dim() % 2 != 0) throw usage_error("head_dim must be even for rotary embeddings");
    if (intermediate_size == 0) throw usage_error("intermediate_size must be positive");
    if (!(norm_eps > 0.0) || !(rope_base > 0.0)) throw usage_error("norm_eps and rope_base must be positive");
}

ModelConfig ModelConfig::xmodel_1b() {
    ModelConfig c;
    c.hidden_size = 2048;
    c.intermediate_size = 5632;
    c.n_heads = 32;
    c.n_kv_heads = 4;
    c.n_layers = 24;
    c.context_len = 4096;
    c.vocab_size = 32000;
    return c;
}

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    return {{"hidden_size", c.hidden_size}, {"intermediate_size", c.intermediate_size},
            {"n_heads", c.n_heads},         {"n_kv_heads", c.n_kv_heads},
            {"n_layers", c.n_layers},       {"context_len", c.context_len},
            {"vocab_size", c.vocab_size},   {"rope_base", c.rope_base},
            {"norm_eps", c.norm_eps}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_kv_heads = j.value("n_kv_heads", c.n_kv_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.context_len = j.value("context_len", c.context_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.validate();
    return c;
}

}  // namespace

ModelConfig load_model_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open model config " + path.string());
    try {
        return config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw usage_error("bad model config " + path.string() + ": " + e.what());
    }
}

void save_model_config(const std::filesystem::path& path, const ModelConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << config_to_json(cfg).dump(2) << '\n';
}

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    data.assign(n, 0.0);
}

Params Params::zeros(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.hidden_size;
    const std::size_t f = cfg.intermediate_size;
    const std::size_t kvd = cfg.kv_dim();
    Params p;
    p.config = cfg;
    p.embedding = Tensor({cfg.vocab_size, d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        p.layers.push_back({Tensor({d}), Tensor({d, d}), Tensor({d, kvd}), Tensor({d, kvd}), Tensor({d, d}),
                            Tensor({d}), Tensor({d, f}), Tensor({d, f}), Tensor({f, d})});
    }
    p.final_norm = Tensor({d});
    p.output = Tensor({d, cfg.vocab_size});
    return p;
}

std::vector<ParamRef> Params::tensors() {
    std::vector<ParamRef> out;
    out.push_back({"embedding", &embedding, false});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& lp = layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        out.push_back({pre + "attn_norm", &lp.attn_norm, true});
        out.push_back({pre + "wq", &lp.wq, false});
        out.push_back({pre + "wk", &lp.wk, false});
        out.push_back({pre + "wv", &lp.wv, false});
        out.push_back({pre + "wo", &lp.wo, false});
        out.push_back({pre + "ffn_norm", &lp.ffn_norm, true});
        out.push_back({pre + "w_gate", &lp.w_gate, false});
        out.push_back({pre + "w_up", &lp.w_up, false});
        out.push_back({pre + "w_down", &lp.w_down, false});
    }
    out.push_back({"final_norm", &final_norm, true});
    out.push_back({"output", &output, false});
    return out;
}

std::vector<ConstParamRef> Params::tensors() const {
    std::vector<ConstParamRef> out;
    for (const auto& r : const_cast<Params*>(this)->tensors()) out.push_back({r.name, r.tensor, r.is_norm_gain});
    return out;
}

std::size_t Params::scalar_count() const {
    std::size_t n = 0;
    for (const auto& r : tensors()) n += r.tensor->data.size();
    return n;
}

Params init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Params p = Params::zeros(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& r : p.tensors()) {
        if (r.is_norm_gain) {
            std::fill(r.tensor->data.begin(), r.tensor->data.end(), 1.0);
        } else {
            for (auto& v : r.tensor->data) v = normal(rng);
        }
    }
    return p;
}

std::vector<double> rmsnorm(std::span<const double> x, std::span<const double> gain, double eps) {
    if (x.size() != gain.size() || x.empty()) throw usage_error("rmsnorm: size mismatch");
    std::vector<double> y(x.size());
    double inv = 0.0;
    rmsnorm_rows(x.data(), gain.data(), y.data(), &inv, 1, x.size(), eps);
    return y;
}

void rope_inplace(std::span<double> v, std::size_t position, double base) {
    if (v.size() % 2 != 0) throw usage_error("rope needs an even head dimension");
    const double h = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size() / 2; ++i) {
        const double angle = static_cast<double>(position) * std::pow(base, -2.0 * static_cast<double>(i) / h);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double a = v[2 * i];
        const double b = v[2 * i + 1];
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

std::vector<double> rope(std::span<const double> v, std::size_t position, double base) {
    std::vector<double> out(v.begin(), v.end());
    rope_inplace(out, position, base);
    return out;
}

double silu(double z) { return z * sigmoid(z); }

std::vector<double> swiglu_ffn(std::span<const double> x, const Tensor& w_gate, const Tensor& w_up,
                               const Tensor& w_down) {
    const std::size_t d = x.size();
    const std::size_t f = w_gate.cols();
    if (w_gate.rows() != d || w_up.rows() != d || w_up.cols() != f || w_down.rows() != f || w_down.cols() != d) {
        throw usage_error("swiglu_ffn: shape mismatch");
    }
    std::vector<double> gate(f), up(f), y(d);
    matmul(x.data(), w_gate.data.data(), gate.data(), 1, d, f);
    matmul(x.data(), w_up.data.data(), up.data(), 1, d, f);
    for (std::size_t i = 0; i < f; ++i) gate[i] = silu(gate[i]) * up[i];
    matmul(gate.data(), w_down.data.data(), y.data(), 1, f, d);
    return y;
}

Tensor gqa_attention(const Tensor& x, const LayerParams& layer, const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t len = x.rows();
    const std::size_t d = cfg.hidden_size;
    const std::size_t kvd = cfg.kv_dim();
    const std::size_t hd = cfg.head_dim();
    if (x.cols() != d) throw usage_error("gqa_attention: input width mismatch");
    const RopeTable table(len, hd, cfg.rope_base);
    std::vector<double> q(len * d), k(len * kvd), v(len * kvd), probs(cfg.n_heads * len * len), attn(len * d);
    matmul(x.data.data(), layer.wq.data.data(), q.data(), len, d, d);
    matmul(x.data.data(), layer.wk.data.data(), k.data(), len, d, kvd);
    matmul(x.data.data(), layer.wv.data.data(), v.data(), len, d, kvd);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) table.apply(q.data() + t * d + h * hd, t, 1.0);
        for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) table.apply(k.data() + t * kvd + h * hd, t, 1.0);
    }
    attention_core(cfg, len, q.data(), k.data(), v.data(), probs.data(), attn.data());
    Tensor out({len, d});
    matmul(attn.data(), layer.wo.data.data(), out.data.data(), len, d, d);
    return out;
}

Tensor forward(const Params& params, std::span<const TokenId> ids) {
    ForwardCache cache;
    Tensor logits;
    logits.data = run_forward(params, ids, cache);
    logits.shape = {ids.size(), params.config.vocab_size};
    return logits;
}

double lm_loss(const Tensor& logits, std::span<const TokenId> targets) {
    if (targets.size() != logits.rows()) throw usage_error("lm_loss: one target per logits row");
    for (TokenId t : targets) {
        if (t >= 0 && static_cast<std::size_t>(t) >= logits.cols()) throw usage_error("lm_loss: target out of range");
    }
    return loss_and_grad(logits.data.data(), logits.rows(), logits.cols(), targets, nullptr);
}

double accumulate_gradients(const Params& params, std::span<const TokenId> ids, std::span<const TokenId> targets,
                            double scale, Params& grads) {
    const ModelConfig& cfg = params.config;
    check_targets(ids, targets, cfg.vocab_size);
    ForwardCache cache;
    const std::vector<double> logits = run_forward(params, ids, cache);
    const std::size_t len = ids.size();
    const std::size_t d = cfg.hidden_size;
    const std::size_t f = cfg.intermediate_size;
    const std::size_t kvd = cfg.kv_dim();
    const std::size_t hd = cfg.head_dim();
    const std::size_t vocab = cfg.vocab_size;
    const std::size_t group = cfg.group_size();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const RopeTable rope_table(len, hd, cfg.rope_base);

    std::vector<double> dlogits(len * vocab);
    const double loss = loss_and_grad(logits.data(), len, vocab, targets, dlogits.data());

    // Output head and final norm.
    matmul_at_acc(cache.xn_final.data(), dlogits.data(), grads.output.data.data(), len, d, vocab, scale);
    std::vector<double> dxn(len * d, 0.0);
    matmul_bt_acc(dlogits.data(), params.output.data.data(), dxn.data(), len, d, vocab);
    std::vector<double> dh(len * d, 0.0);
    rmsnorm_rows_backward(cache.h_out.data(), params.final_norm.data.data(), cache.inv_rms_final.data(), dxn.data(),
                          dh.data(), grads.final_norm.data.data(), len, d, scale);

    std::vector<double> dact(len * f), dgate(len * f), dup(len * f);
    std::vector<double> dattn(len * d), dq(len * d), dk(len * kvd), dv(len * kvd), dp(len);
    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const LayerParams& lp = params.layers[l];
        LayerParams& gl = grads.layers[l];
        const LayerCache& c = cache.layers[l];

        // Feed-forward block: h = h_mid + down(silu(gate) * up).
        matmul_at_acc(c.act.data(), dh.data(), gl.w_down.data.data(), len, f, d, scale);
        std::fill(dact.begin(), dact.end(), 0.0);
        matmul_bt_acc(dh.data(), lp.w_down.data.data(), dact.data(), len, f, d);
        for (std::size_t i = 0; i < len * f; ++i) {
            const double s = sigmoid(c.gate[i]);
            const double si = c.gate[i] * s;
            dup[i] = dact[i] * si;
            dgate[i] = dact[i] * c.up[i] * s * (1.0 + c.gate[i] * (1.0 - s));
        }
        matmul_at_acc(c.xn2.data(), dgate.data(), gl.w_gate.data.data(), len, d, f, scale);
        matmul_at_acc(c.xn2.data(), dup.data(), gl.w_up.data.data(), len, d, f, scale);
        std::fill(dxn.begin(), dxn.end(), 0.0);
        matmul_bt_acc(dgate.data(), lp.w_gate.data.data(), dxn.data(), len, d, f);
        matmul_bt_acc(dup.data(), lp.w_up.data.data(), dxn.data(), len, d, f);
        // Residual: dh flows through unchanged and picks up the norm path.
        rmsnorm_rows_backward(c.h_mid.data(), lp.ffn_norm.data.data(), c.inv_rms2.data(), dxn.data(), dh.data(),
                              gl.ffn_norm.data.data(), len, d, scale);

        // Attention block: h_mid = h_in + wo(attn).
        matmul_at_acc(c.attn.data(), dh.data(), gl.wo.data.data(), len, d, d, scale);
        std::fill(dattn.begin(), dattn.end(), 0.0);
        matmul_bt_acc(dh.data(), lp.wo.data.data(), dattn.data(), len, d, d);
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t kvh = h / group;
            const double* p = c.probs.data() + h * len * len;
            for (std::size_t t = 0; t < len; ++t) {
                const double* row = p + t * len;
                const double* dot = dattn.data() + t * d + h * hd;
                double weighted = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    const double* vu = c.v.data() + u * kvd + kvh * hd;
                    double s = 0.0;
                    for (std::size_t i = 0; i < hd; ++i) s += dot[i] * vu[i];
                    dp[u] = s;
                    weighted += row[u] * s;
                    double* dvu = dv.data() + u * kvd + kvh * hd;
                    for (std::size_t i = 0; i < hd; ++i) dvu[i] += row[u] * dot[i];
                }
                const double* qt = c.q.data() + t * d + h * hd;
                double* dqt = dq.data() + t * d + h * hd;
                for (std::size_t u = 0; u <= t; ++u) {
                    const double ds = row[u] * (dp[u] - weighted) * att_scale;
                    const double* ku = c.k.data() + u * kvd + kvh * hd;
                    double* dku = dk.data() + u * kvd + kvh * hd;
                    for (std::size_t i = 0; i < hd; ++i) {
                        dqt[i] += ds * ku[i];
                        dku[i] += ds * qt[i];
                    }
                }
            }
        }
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h) rope_table.apply(dq.data() + t * d + h * hd, t, -1.0);
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) rope_table.apply(dk.data() + t * kvd + h * hd, t, -1.0);
        }
        matmul_at_acc(c.xn.data(), dq.data(), gl.wq.data.data(), len, d, d, scale);
        matmul_at_acc(c.xn.data(), dk.data(), gl.wk.data.data(), len, d, kvd, scale);
        matmul_at_acc(c.xn.data(), dv.data(), gl.wv.data.data(), len, d, kvd, scale);
        std::fill(dxn.begin(), dxn.end(), 0.0);
        matmul_bt_acc(dq.data(), lp.wq.data.data(), dxn.data(), len, d, d);
        matmul_bt_acc(dk.data(), lp.wk.data.data(), dxn.data(), len, d, kvd);
        matmul_bt_acc(dv.data(), lp.wv.data.data(), dxn.data(), len, d, kvd);
        rmsnorm_rows_backward(c.h_in.data(), lp.attn_norm.data.data(), c.inv_rms.data(), dxn.data(), dh.data(),
                              gl.attn_norm.data.data(), len, d, scale);
    }
    for (std::size_t t = 0; t < len; ++t) {
        double* row = grads.embedding.data.data() + static_cast<std::size_t>(ids[t]) * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += scale * dh[t * d + i];
    }
    return loss;
}

LossAndGrads backward(const Params& params, std::span<const TokenId> ids, std::span<const TokenId> targets) {
    LossAndGrads out{0.0, Params::zeros(params.config)};
    out.loss = accumulate_gradients(params, ids, targets, 1.0, out.grads);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "FGCK", version, config JSON, then named f64 tensors.

namespace {

constexpr char kCkptMagic[4] = {'F', 'G', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw data_error("checkpoint truncated");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    std::string s(get<std::uint32_t>(in), '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(s.size()))) throw data_error("checkpoint truncated");
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint " + path.string());
    out.write(kCkptMagic, 4);
    put(out, kCkptVersion);
    put_string(out, config_to_json(params.config).dump());
    const auto refs = params.tensors();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(refs.size()));
    for (const auto& r : refs) {
        put_string(out, r.name);
        put<std::uint8_t>(out, kDtypeF64);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.tensor->shape.size()));
        for (auto s : r.tensor->shape) put<std::uint64_t>(out, s);
        out.write(reinterpret_cast<const char*>(r.tensor->data.data()),
                  static_cast<std::streamsize>(r.tensor->data.size() * sizeof(double)));
    }
    if (!out) throw data_error("failed writing checkpoint " + path.string());
}

Params load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) throw data_error(path.string() + " is not a checkpoint");
    if (get<std::uint32_t>(in) != kCkptVersion) throw data_error("unsupported checkpoint version");
    ModelConfig cfg;
    try {
        cfg = config_from_json(nlohmann::json::parse(get_string(in)));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("checkpoint config: ") + e.what());
    }
    Params p = Params::zeros(cfg);
    auto refs = p.tensors();
    if (get<std::uint32_t>(in) != refs.size()) throw data_error("checkpoint tensor count mismatch");
    for (auto& r : refs) {
        if (get_string(in) != r.name) throw data_error("checkpoint tensor order mismatch at " + r.name);
        if (get<std::uint8_t>(in) != kDtypeF64) throw data_error("checkpoint: unsupported element type");
        std::vector<std::size_t> shape(get<std::uint32_t>(in));
        for (auto& s : shape) s = get<std::uint64_t>(in);
        if (shape != r.tensor->shape) throw data_error("checkpoint shape mismatch for " + r.name);
        if (!in.read(reinterpret_cast<char*>(r.tensor->data.data()),
                     static_cast<std::streamsize>(r.tensor->data.size() * sizeof(double)))) {
            throw data_error("checkpoint truncated in " + r.name);
        }
    }
    return p;
}

}  // namespace forge::nn
