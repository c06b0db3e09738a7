#pragma once

// Straight-line transformer used as an oracle for the library model. Shares
// only the parameter container; every computation is written out naively,
// with rotary embedding done through complex multiplication.

#include <cmath>
#include <complex>
#include <vector>

#include "forge/model.hpp"

namespace testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_rows(const forge::nn::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    }
    return m;
}

// Row vector times (in, out) matrix.
inline std::vector<double> vecmat(const std::vector<double>& x, const forge::nn::Tensor& w) {
    std::vector<double> y(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) y[j] += x[i] * w.at(i, j);
    }
    return y;
}

inline std::vector<double> ref_rmsnorm(const std::vector<double>& x, const forge::nn::Tensor& g, double eps) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = g.data[i] * x[i] * inv;
    return y;
}

// Rotates head vector h (in place) as complex pairs.
inline void ref_rope(double* h, std::size_t dim, std::size_t pos, double base) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        const std::complex<double> z(h[2 * i], h[2 * i + 1]);
        const auto r = z * std::polar(1.0, theta * static_cast<double>(pos));
        h[2 * i] = r.real();
        h[2 * i + 1] = r.imag();
    }
}

/// Causal attention block (without the residual). When H_kv == H this is
/// plain multi-head attention.
inline Mat ref_attention(const Mat& x, const forge::nn::LayerParams& p, const forge::nn::ModelConfig& cfg,
                         bool apply_rope = true) {
    const std::size_t L = x.size(), H = cfg.n_heads, Hkv = cfg.n_kv_heads, hd = cfg.hidden_size / H;
    Mat q(L), k(L), v(L);
    for (std::size_t t = 0; t < L; ++t) {
        q[t] = vecmat(x[t], p.wq);
        k[t] = vecmat(x[t], p.wk);
        v[t] = vecmat(x[t], p.wv);
        if (apply_rope) {
            for (std::size_t h = 0; h < H; ++h) ref_rope(&q[t][h * hd], hd, t, cfg.rope_base);
            for (std::size_t h = 0; h < Hkv; ++h) ref_rope(&k[t][h * hd], hd, t, cfg.rope_base);
        }
    }
    Mat concat(L, std::vector<double>(cfg.hidden_size, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t g = h / (H / Hkv);
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<double> s(i + 1);
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < hd; ++c) dot += q[i][h * hd + c] * k[j][g * hd + c];
                s[j] = dot / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, s[j]);
            }
            double z = 0.0;
            for (auto& e : s) z += (e = std::exp(e - mx));
            for (std::size_t j = 0; j <= i; ++j) {
                for (std::size_t c = 0; c < hd; ++c) concat[i][h * hd + c] += s[j] / z * v[j][g * hd + c];
            }
        }
    }
    Mat out(L);
    for (std::size_t t = 0; t < L; ++t) out[t] = vecmat(concat[t], p.wo);
    return out;
}

inline std::vector<double> ref_ffn(const std::vector<double>& x, const forge::nn::LayerParams& p) {
    const auto gate = vecmat(x, p.w_gate);
    const auto up = vecmat(x, p.w_up);
    std::vector<double> hidden(gate.size());
    for (std::size_t i = 0; i < gate.size(); ++i) hidden[i] = gate[i] / (1.0 + std::exp(-gate[i])) * up[i];
    return vecmat(hidden, p.w_down);
}

inline Mat ref_forward(const forge::nn::Params& params, const std::vector<forge::nn::TokenId>& ids) {
    const auto& cfg = params.config;
    Mat x(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) {
        x[t].assign(params.embedding.data.begin() + static_cast<long>(ids[t] * cfg.hidden_size),
                    params.embedding.data.begin() + static_cast<long>((ids[t] + 1) * cfg.hidden_size));
    }
    for (const auto& layer : params.layers) {
        Mat normed(x.size());
        for (std::size_t t = 0; t < x.size(); ++t) normed[t] = ref_rmsnorm(x[t], layer.attn_norm, cfg.norm_eps);
        const auto attn = ref_attention(normed, layer, cfg);
        for (std::size_t t = 0; t < x.size(); ++t) {
            for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += attn[t][c];
        }
        for (std::size_t t = 0; t < x.size(); ++t) {
            const auto f = ref_ffn(ref_rmsnorm(x[t], layer.ffn_norm, cfg.norm_eps), layer);
            for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += f[c];
        }
    }
    Mat logits(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        logits[t] = vecmat(ref_rmsnorm(x[t], params.final_norm, cfg.norm_eps), params.output);
    }
    return logits;
}

inline double ref_loss(const Mat& logits, const std::vector<forge::nn::TokenId>& targets) {
    double total = 0.0;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        double mx = -1e300;
        for (double v : logits[t]) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits[t]) z += std::exp(v - mx);
        total += -(logits[t][static_cast<std::size_t>(targets[t])] - mx - std::log(z));
    }
    return total / static_cast<double>(logits.size());
}

}  // namespace testing
