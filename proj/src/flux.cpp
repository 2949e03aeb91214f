#include "geonew/flux.hpp"

#include <cmath>
#include <stdexcept>

namespace geonew::flux {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using linalg::DenseMatrix;

double compute_zeta(const DenseMatrix& k_free, const DenseMatrix& d0, double epsilon) {
    DenseMatrix ks = k_free;
    for (std::size_t i = 0; i < ks.rows; ++i)
        for (std::size_t j = i + 1; j < ks.cols; ++j)
            ks(i, j) = ks(j, i) = 0.5 * (ks(i, j) + ks(j, i));
    auto eig = linalg::sym_eig(ks);
    const double lmin = eig.eigenvalues.front();
    if (lmin <= 0.0)
        throw std::runtime_error(
            "compute_zeta: singular k_free (no Dirichlet constraints present)");
    const double d0_norm = linalg::op_norm_2(d0);
    return 0.99 * lmin / (epsilon * d0_norm);
}

double edge_fanout(std::size_t p_total) {
    return std::sqrt(2.0 * double(p_total > 1 ? p_total - 1 : 1));
}

double amplitude_cap(double zeta_eff, std::size_t p_total, double eps_h) {
    return zeta_eff / (2.0 * edge_fanout(p_total) * (1.0 + eps_h));
}

namespace {

// base operator [I | 0] (or I when square), the identity on the leading block
Tensor eye_block(std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) t(i, i) = 1.0;
    return t;
}

}  // namespace

void declare_flux_model(nn::ParamBundle& p, const std::string& prefix, std::size_t fields,
                        const FluxConfig& cfg, std::size_t d_ctx, std::size_t p1,
                        std::mt19937_64& rng) {
    const std::size_t d = std::size_t(cfg.d_op);
    p.add(prefix + ".pi", nn::xavier_uniform(d, fields, rng));
    p.add(prefix + ".a0", eye_block(d, 2 * d));
    p.add(prefix + ".b0", eye_block(2 * d, 2 * d));
    p.add(prefix + ".c0", eye_block(d, 2 * d));
    const std::size_t n_out = d * 2 * d + 2 * d * 2 * d + d * 2 * d;
    nn::declare_mlp(p, prefix + ".hyper", {d_ctx, cfg.hyper_hidden, n_out}, rng,
                    /*zero_last=*/true);
    p.add(prefix + ".beta_log", Tensor::scalar(cfg.beta_log_init));
    p.add(prefix + ".gamma_log", Tensor::scalar(cfg.gamma_log_init));
    nn::declare_mlp(p, prefix + ".hodge", {d_ctx, cfg.hodge_hidden, p1 * p1}, rng,
                    /*zero_last=*/true);
}

FluxVars build_flux_operators(Tape& t, const nn::ParamVars& p, const std::string& prefix,
                              Var c_f, const FluxConfig& cfg, std::size_t p_total,
                              std::size_t p1, double zeta_eff) {
    FluxVars fv;
    const std::size_t d = std::size_t(cfg.d_op);
    fv.eps_h = cfg.eps_h;
    fv.mean_channel = cfg.mean_channel;
    fv.fanout = edge_fanout(p_total);
    fv.amp_cap = amplitude_cap(zeta_eff, p_total, cfg.eps_h);

    Var ctx = t.reshape(c_f, 1, c_f.rows * c_f.cols);
    Var hyper = nn::mlp_forward(t, p, prefix + ".hyper", ctx, 2);
    const std::size_t na = d * 2 * d, nb = 2 * d * 2 * d;
    Var da = t.reshape(t.slice_cols(hyper, 0, na), d, 2 * d);
    Var db = t.reshape(t.slice_cols(hyper, na, na + nb), 2 * d, 2 * d);
    Var dc = t.reshape(t.slice_cols(hyper, na + nb, na + nb + na), d, 2 * d);
    fv.pi = nn::bounded_weight(t, p[prefix + ".pi"]);
    fv.a = nn::bounded_weight(t, t.add(p[prefix + ".a0"], da));
    fv.b = nn::bounded_weight(t, t.add(p[prefix + ".b0"], db));
    fv.c = nn::bounded_weight(t, t.add(p[prefix + ".c0"], dc));

    fv.beta_eff = t.minimum(t.exp_(p[prefix + ".beta_log"]), fv.amp_cap);
    fv.gamma_eff = t.minimum(t.exp_(p[prefix + ".gamma_log"]), fv.amp_cap);

    Var hraw = t.reshape(nn::mlp_forward(t, p, prefix + ".hodge", ctx, 2), p1, p1);
    auto hfac = nn::bounded_weight(t, hraw);
    fv.hodge_factor_bound = hfac.bound;
    Var hh = t.matmul(hfac.weight, t.transpose(hfac.weight));
    DenseMatrix reg = DenseMatrix::identity(p1);
    for (std::size_t k = 0; k < p1; ++k) reg(k, k) = cfg.eps_h;
    fv.hodge = t.add(hh, t.constant(Tensor::from_dense(reg)));
    return fv;
}

Var edge_features(Tape& t, Var u_full, const std::vector<std::array<std::size_t, 2>>& edges,
                  Var pi_weight, bool mean_channel) {
    std::vector<std::size_t> is, js;
    is.reserve(edges.size());
    js.reserve(edges.size());
    Tensor sign(edges.size(), 1);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e][0] == edges[e][1])
            throw std::invalid_argument("edge_features: degenerate edge i == j");
        is.push_back(edges[e][0]);
        js.push_back(edges[e][1]);
        sign(e, 0) = edges[e][0] < edges[e][1] ? 1.0 : -1.0;  // (-1)^{1_{i>j}}
    }
    Var ui = t.gather_rows(u_full, is);
    Var uj = t.gather_rows(u_full, js);
    Var diff = t.sub(ui, uj);
    Var dproj = t.matmul(diff, t.transpose(pi_weight));  // P1 x d_op
    Var mean = t.smul(t.add(ui, uj), 0.5);
    Var mproj = t.matmul(mean, t.transpose(pi_weight));
    if (!mean_channel) {
        mproj = t.smul(mproj, 0.0);
    } else {
        // per-edge orientation sign on the mean block keeps xi odd
        Var signs = t.constant(std::move(sign));
        Var sign_mat = t.matmul(signs, t.constant(Tensor(1, mproj.cols, 1.0)));
        mproj = t.mul(mproj, sign_mat);
    }
    return t.concat_cols(dproj, mproj);
}

Var primal_flux(Tape& t, Var xi, const FluxVars& fv) {
    Var lin = t.scale(nn::bounded_linear(t, xi, fv.a), fv.beta_eff);
    Var nl = t.scale(nn::bounded_linear(t, t.tanh_(nn::bounded_linear(t, xi, fv.b)), fv.c),
                     fv.gamma_eff);
    Var y = t.add(lin, nl);            // P1 x d_op
    return t.matmul(y, fv.pi.weight);  // back to P1 x F
}

Var dual_flux(Tape& t, Var primal, const FluxVars& fv) { return t.matmul(fv.hodge, primal); }

double certified_lipschitz(const Tape& t, const FluxVars& fv) {
    const double beta = t.val(fv.beta_eff).v[0];
    const double gamma = t.val(fv.gamma_eff).v[0];
    const double ba = t.val(fv.a.bound).v[0];
    const double bb = t.val(fv.b.bound).v[0];
    const double bc = t.val(fv.c.bound).v[0];
    const double bpi = t.val(fv.pi.bound).v[0];
    const double bh = t.val(fv.hodge_factor_bound).v[0];
    const double bound_h = bh * bh + fv.eps_h;
    return (beta * ba + gamma * bb * bc) * bpi * bpi * fv.fanout * bound_h;
}

}  // namespace geonew::flux
