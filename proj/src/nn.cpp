#include "geonew/nn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace geonew::nn {

using ad::Tape;
using ad::Tensor;
using ad::Var;

ad::Tensor& ParamBundle::add(const std::string& name, ad::Tensor t) {
    if (index.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index[name] = names.size();
    names.push_back(name);
    values.push_back(std::move(t));
    return values.back();
}

ad::Tensor& ParamBundle::at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return values[it->second];
}

const ad::Tensor& ParamBundle::at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return values[it->second];
}

std::size_t ParamBundle::total_size() const {
    std::size_t s = 0;
    for (const auto& v : values) s += v.size();
    return s;
}

ParamVars bind(Tape& tape, const ParamBundle& params) {
    ParamVars pv;
    pv.bundle = &params;
    pv.vars.reserve(params.values.size());
    for (const auto& t : params.values) pv.vars.push_back(tape.input(t));
    return pv;
}

Var ParamVars::operator[](const std::string& name) const {
    auto it = bundle->index.find(name);
    if (it == bundle->index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return vars[it->second];
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> d(-limit, limit);
    Tensor t(rows, cols);
    for (auto& x : t.v) x = d(rng);
    return t;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                    std::mt19937_64& rng) {
    m = std::min(m, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, n - 1);
        std::swap(idx[i], idx[d(rng)]);
    }
    idx.resize(m);
    return idx;
}

void declare_mlp(ParamBundle& p, const std::string& prefix,
                 const std::vector<std::size_t>& widths, std::mt19937_64& rng, bool zero_last) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        const std::size_t in = widths[i], out = widths[i + 1];
        if (zero_last && last)
            p.add(prefix + ".w" + std::to_string(i), Tensor(out, in));
        else
            p.add(prefix + ".w" + std::to_string(i), xavier_uniform(out, in, rng));
        p.add(prefix + ".b" + std::to_string(i), Tensor(1, out));
    }
}

Var mlp_forward(Tape& t, const ParamVars& p, const std::string& prefix, Var x,
                std::size_t n_layers, Activation act) {
    Var h = x;
    for (std::size_t i = 0; i < n_layers; ++i) {
        Var w = p[prefix + ".w" + std::to_string(i)];
        Var b = p[prefix + ".b" + std::to_string(i)];
        h = t.add(t.matmul(h, t.transpose(w)), t.broadcast_row(b, h.rows));
        if (i + 1 < n_layers) {
            switch (act) {
                case Activation::Gelu: h = t.gelu(h); break;
                case Activation::Tanh: h = t.tanh_(h); break;
                case Activation::Relu: h = t.relu(h); break;
                case Activation::None: break;
            }
        }
    }
    return h;
}

void declare_attention(ParamBundle& p, const std::string& prefix, std::size_t d,
                       std::mt19937_64& rng) {
    p.add(prefix + ".wq", xavier_uniform(d, d, rng));
    p.add(prefix + ".wk", xavier_uniform(d, d, rng));
    p.add(prefix + ".wv", xavier_uniform(d, d, rng));
    p.add(prefix + ".wo", xavier_uniform(d, d, rng));
}

Var attention(Tape& t, const ParamVars& p, const std::string& prefix, Var q, Var k, Var v,
              int n_heads) {
    const std::size_t d = q.cols;
    if (d % std::size_t(n_heads) != 0)
        throw std::invalid_argument("attention: d_model not divisible by n_heads");
    const std::size_t dh = d / std::size_t(n_heads);
    Var Q = t.matmul(q, t.transpose(p[prefix + ".wq"]));
    Var K = t.matmul(k, t.transpose(p[prefix + ".wk"]));
    Var V = t.matmul(v, t.transpose(p[prefix + ".wv"]));
    Var heads;
    for (int h = 0; h < n_heads; ++h) {
        const std::size_t c0 = std::size_t(h) * dh, c1 = c0 + dh;
        Var qh = t.slice_cols(Q, c0, c1);
        Var kh = t.slice_cols(K, c0, c1);
        Var vh = t.slice_cols(V, c0, c1);
        Var scores = t.smul(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
        Var att = t.softmax_rows(scores);
        Var oh = t.matmul(att, vh);
        heads = h == 0 ? oh : t.concat_cols(heads, oh);
    }
    return t.matmul(heads, t.transpose(p[prefix + ".wo"]));
}

void declare_layer_norm(ParamBundle& p, const std::string& prefix, std::size_t d) {
    p.add(prefix + ".g", Tensor(1, d, 1.0));
    p.add(prefix + ".b", Tensor(1, d));
}

Var layer_norm(Tape& t, const ParamVars& p, const std::string& prefix, Var x) {
    Var y = t.layer_norm_rows(x);
    y = t.mul(y, t.broadcast_row(p[prefix + ".g"], x.rows));
    return t.add(y, t.broadcast_row(p[prefix + ".b"], x.rows));
}

void declare_encoder(ParamBundle& p, const std::string& prefix, std::size_t d_in,
                     const EncoderConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = std::size_t(cfg.d_model);
    p.add(prefix + ".in_proj.w", xavier_uniform(d, d_in, rng));
    p.add(prefix + ".in_proj.b", Tensor(1, d));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        declare_layer_norm(p, bp + ".ln1", d);
        declare_attention(p, bp + ".attn_self", d, rng);
        declare_layer_norm(p, bp + ".ln2q", d);
        declare_layer_norm(p, bp + ".ln2kv", d);
        declare_attention(p, bp + ".attn_cross", d, rng);
        declare_layer_norm(p, bp + ".ln3", d);
        p.add(bp + ".ffn.w0", xavier_uniform(std::size_t(cfg.ffn_width), d, rng));
        p.add(bp + ".ffn.b0", Tensor(1, std::size_t(cfg.ffn_width)));
        p.add(bp + ".ffn.w1", xavier_uniform(d, std::size_t(cfg.ffn_width), rng));
        p.add(bp + ".ffn.b1", Tensor(1, d));
    }
}

Var anchor_encoder(Tape& t, const ParamVars& p, const std::string& prefix, Var features,
                   const EncoderConfig& cfg, std::mt19937_64& anchor_rng) {
    const std::size_t n = features.rows;
    Var z = t.add(t.matmul(features, t.transpose(p[prefix + ".in_proj.w"])),
                  t.broadcast_row(p[prefix + ".in_proj.b"], n));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        // anchors resampled independently in each block
        auto idx = sample_without_replacement(n, std::size_t(cfg.n_anchors), anchor_rng);
        Var a = t.gather_rows(z, idx);
        Var an = layer_norm(t, p, bp + ".ln1", a);
        Var a2 = t.add(a, attention(t, p, bp + ".attn_self", an, an, an, cfg.n_heads));
        Var zq = layer_norm(t, p, bp + ".ln2q", z);
        Var akv = layer_norm(t, p, bp + ".ln2kv", a2);
        z = t.add(z, attention(t, p, bp + ".attn_cross", zq, akv, akv, cfg.n_heads));
        Var zn = layer_norm(t, p, bp + ".ln3", z);
        Var h = t.gelu(t.add(t.matmul(zn, t.transpose(p[bp + ".ffn.w0"])),
                             t.broadcast_row(p[bp + ".ffn.b0"], n)));
        Var ffn = t.add(t.matmul(h, t.transpose(p[bp + ".ffn.w1"])),
                        t.broadcast_row(p[bp + ".ffn.b1"], n));
        z = t.add(z, ffn);
    }
    return z;
}

void declare_pool(ParamBundle& p, const std::string& prefix, std::size_t n_context,
                  std::size_t d_model, std::mt19937_64& rng) {
    p.add(prefix + ".queries", xavier_uniform(n_context, d_model, rng));
    declare_attention(p, prefix + ".attn", d_model, rng);
}

Var perceiver_pool(Tape& t, const ParamVars& p, const std::string& prefix, Var z, int n_heads) {
    Var q = p[prefix + ".queries"];
    return attention(t, p, prefix + ".attn", q, z, z, n_heads);
}

BoundedWeight bounded_weight(Tape& t, Var a) {
    Var ninf = t.max_all(t.row_sums(t.abs_(a)));
    Var raw = t.smul(ninf, std::sqrt(double(a.rows)));
    Var scale = t.maximum(raw, 1.0);
    Var inv = t.reciprocal(scale);
    BoundedWeight w;
    w.weight = t.scale(a, inv);
    w.bound = t.mul(raw, inv);  // min(raw, 1)
    return w;
}

Var bounded_linear(Tape& t, Var x, const BoundedWeight& w) {
    return t.matmul(x, t.transpose(w.weight));
}

}  // namespace geonew::nn
