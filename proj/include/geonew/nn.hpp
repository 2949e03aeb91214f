#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "geonew/autodiff.hpp"

namespace geonew::nn {

/// Named parameter tensors in declaration order (the order used for
/// checkpoint serialization and optimizer state).
struct ParamBundle {
    std::vector<std::string> names;
    std::vector<ad::Tensor> values;
    std::unordered_map<std::string, std::size_t> index;

    ad::Tensor& add(const std::string& name, ad::Tensor t);
    bool has(const std::string& name) const { return index.count(name) > 0; }
    ad::Tensor& at(const std::string& name);
    const ad::Tensor& at(const std::string& name) const;
    std::size_t total_size() const;
};

/// Parameters bound as leaves on a tape, addressable by name.
struct ParamVars {
    const ParamBundle* bundle = nullptr;
    std::vector<ad::Var> vars;
    ad::Var operator[](const std::string& name) const;
};
ParamVars bind(ad::Tape& tape, const ParamBundle& params);

ad::Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

enum class Activation { Gelu, Tanh, Relu, None };

struct EncoderConfig {
    int n_blocks = 2;
    int n_heads = 2;
    int d_model = 32;
    int n_anchors = 16;
    int ffn_width = 64;
    std::uint64_t seed = 0;
};

/// Affine layers "prefix.w{i}" (out x in) / "prefix.b{i}" (1 x out);
/// activation after every layer except the last.
void declare_mlp(ParamBundle& p, const std::string& prefix,
                 const std::vector<std::size_t>& widths, std::mt19937_64& rng,
                 bool zero_last = false);
ad::Var mlp_forward(ad::Tape& t, const ParamVars& p, const std::string& prefix, ad::Var x,
                    std::size_t n_layers, Activation act = Activation::Gelu);

/// Multi-head scaled dot-product attention with output projection, bias-free
/// projections "prefix.wq/wk/wv/wo" (d x d), no positional encoding.
void declare_attention(ParamBundle& p, const std::string& prefix, std::size_t d_model,
                       std::mt19937_64& rng);
ad::Var attention(ad::Tape& t, const ParamVars& p, const std::string& prefix, ad::Var q,
                  ad::Var k, ad::Var v, int n_heads);

/// Inducing-point anchor encoder: input projection, then per block a fresh
/// uniformly sampled anchor set, pre-layer-norm residual anchor
/// self-attention, residual token<-anchor cross-attention, and a residual
/// position-wise FFN. O(NM + M^2) cost.
void declare_encoder(ParamBundle& p, const std::string& prefix, std::size_t d_in,
                     const EncoderConfig& cfg, std::mt19937_64& rng);
ad::Var anchor_encoder(ad::Tape& t, const ParamVars& p, const std::string& prefix,
                       ad::Var features, const EncoderConfig& cfg, std::mt19937_64& anchor_rng);

/// Perceiver-style pooling c = Attn(L, z, z) with learned latent queries
/// "prefix.queries" (n_c x d_model).
void declare_pool(ParamBundle& p, const std::string& prefix, std::size_t n_context,
                  std::size_t d_model, std::mt19937_64& rng);
ad::Var perceiver_pool(ad::Tape& t, const ParamVars& p, const std::string& prefix, ad::Var z,
                       int n_heads);

/// Weight normalized as A / max(1, sqrt(rows) * ||A||_inf) with the certified
/// l2 bound min(1, sqrt(rows) * ||A||_inf); both stay inside the
/// differentiable graph.
struct BoundedWeight {
    ad::Var weight;
    ad::Var bound;  // 1x1
};
BoundedWeight bounded_weight(ad::Tape& t, ad::Var a);

/// y = x * W_hat^T for row-vector inputs; the map's l2 gain is certified <= 1.
ad::Var bounded_linear(ad::Tape& t, ad::Var x, const BoundedWeight& w);

/// Pre-layer-norm with learnable gain/bias "prefix.g" / "prefix.b" (1 x d).
void declare_layer_norm(ParamBundle& p, const std::string& prefix, std::size_t d);
ad::Var layer_norm(ad::Tape& t, const ParamVars& p, const std::string& prefix, ad::Var x);

/// M distinct indices sampled uniformly from [0, n) (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                    std::mt19937_64& rng);

}  // namespace geonew::nn
