#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace forge::nn {

using TokenId = std::int32_t;

struct ModelConfig {
    std::size_t hidden_size = 64;
    std::size_t intermediate_size = 176;
    std::size_t n_heads = 8;
    std::size_t n_kv_heads = 2;
    std::size_t n_layers = 2;
    std::size_t context_len = 128;
    std::size_t vocab_size = 512;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;

    std::size_t head_dim() const { return hidden_size / n_heads; }
    std::size_t kv_dim() const { return head_dim() * n_kv_heads; }
    std::size_t group_size() const { return n_heads / n_kv_heads; }

    /// Throws usage_error on inconsistent dimensions.
    void validate() const;

    /// Desk-scale default (d=64, f=176, 8 heads, 2 kv heads, 2 layers, V=512); keeps f/d = 2.75.
    static ModelConfig toy() { return {}; }
    /// The 1.1B configuration: 2048 / 5632 / 32 heads / 4 kv heads / 24 layers / 4096.
    static ModelConfig xmodel_1b();

    bool operator==(const ModelConfig&) const = default;
};

ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const std::filesystem::path& path, const ModelConfig& cfg);

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims);

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Tensor&) const = default;
};

/// Weight matrices are stored input-major: y = x * W with W of shape (in, out).
struct LayerParams {
    Tensor attn_norm;  // (d)
    Tensor wq;         // (d, d)
    Tensor wk;         // (d, kv_dim)
    Tensor wv;         // (d, kv_dim)
    Tensor wo;         // (d, d)
    Tensor ffn_norm;   // (d)
    Tensor w_gate;     // (d, f)
    Tensor w_up;       // (d, f)
    Tensor w_down;     // (f, d)

    bool operator==(const LayerParams&) const = default;
};

struct Params;

/// Named view of one parameter tensor.
struct ParamRef {
    std::string name;
    Tensor* tensor;
    bool is_norm_gain;
};

struct ConstParamRef {
    std::string name;
    const Tensor* tensor;
    bool is_norm_gain;
};

struct Params {
    ModelConfig config;
    Tensor embedding;  // (V, d)
    std::vector<LayerParams> layers;
    Tensor final_norm;  // (d)
    Tensor output;      // (d, V), independent of the embedding

    /// Correctly shaped tensors, all zero (gains included).
    static Params zeros(const ModelConfig& cfg);

    std::vector<ParamRef> tensors();
    std::vector<ConstParamRef> tensors() const;
    std::size_t scalar_count() const;

    bool operator==(const Params&) const = default;
};

/// normal(0, 0.02) weights, unit norm gains.
Params init_params(const ModelConfig& cfg, std::uint64_t seed);

// --- building blocks --------------------------------------------------------

std::vector<double> rmsnorm(std::span<const double> x, std::span<const double> gain, double eps);

/// Rotates consecutive pairs (v[2i], v[2i+1]) by position * base^(-2i/h).
void rope_inplace(std::span<double> v, std::size_t position, double base);
std::vector<double> rope(std::span<const double> v, std::size_t position, double base);

double silu(double z);

/// down^T (silu(gate^T x) * up^T x) for a single vector.
std::vector<double> swiglu_ffn(std::span<const double> x, const Tensor& w_gate, const Tensor& w_up,
                               const Tensor& w_down);

/// Causal grouped-query attention over rows of x (positions 0..L-1),
/// including the output projection.
Tensor gqa_attention(const Tensor& x, const LayerParams& layer, const ModelConfig& cfg);

// --- whole model -----------------------------------------------------------------

/// Logits of shape (L, V). Throws usage_error for ids out of range or
/// sequences longer than the context.
Tensor forward(const Params& params, std::span<const TokenId> ids);

/// Mean next-token cross-entropy; positions whose target is negative are
/// excluded.
double lm_loss(const Tensor& logits, std::span<const TokenId> targets);

struct LossAndGrads {
    double loss = 0.0;
    Params grads;
};

/// Exact gradients of lm_loss(forward(params, ids), targets).
LossAndGrads backward(const Params& params, std::span<const TokenId> ids, std::span<const TokenId> targets);

/// Adds the gradients of one sequence to `grads` scaled by `scale`; returns
/// the sequence loss. Used by the trainer to accumulate without copies.
double accumulate_gradients(const Params& params, std::span<const TokenId> ids, std::span<const TokenId> targets,
                            double scale, Params& grads);

// --- checkpoints -----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace forge::nn
