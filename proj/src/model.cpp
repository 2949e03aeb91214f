#include "geonew/model.hpp"

#include <cmath>
#include <stdexcept>

namespace geonew::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using linalg::DenseMatrix;

GeoNewModel GeoNewModel::init(const ModelConfig& cfg) {
    GeoNewModel m;
    m.cfg = cfg;
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = std::size_t(cfg.encoder.d_model);
    nn::declare_encoder(m.params, "encoder", cfg.d_in, cfg.encoder, rng);
    nn::declare_pool(m.params, "pool_w", cfg.n_context, d, rng);
    nn::declare_pool(m.params, "pool_f", cfg.n_context, d, rng);
    reduced::declare_partition_model(m.params, "wmodel", d, cfg.n_context, cfg.w_hidden,
                                     cfg.p_free, rng);
    flux::declare_flux_model(m.params, "flux", cfg.fields, cfg.flux_cfg,
                             cfg.n_context * d, cfg.p1(), rng);
    return m;
}

DenseMatrix SampleGraph::k_free_values() const {
    DenseMatrix k = tape->val(proj.k).to_dense();
    std::vector<std::size_t> free_idx(p_total - info.n_fixed);
    for (std::size_t i = 0; i < free_idx.size(); ++i) free_idx[i] = i;
    return linalg::submatrix(k, free_idx, free_idx);
}

DenseMatrix SampleGraph::w_values() const { return tape->val(w).to_dense(); }

std::unique_ptr<SampleGraph> build_sample(const GeoNewModel& m, const SampleInputs& in,
                                          double zeta_eff, std::mt19937_64& anchor_rng) {
    if (m.cfg.fields != 1)
        throw std::invalid_argument("build_sample: only scalar fields are wired end to end");
    if (in.features->cols != m.cfg.d_in)
        throw std::invalid_argument("build_sample: feature dimension mismatch");
    auto sg = std::make_unique<SampleGraph>();
    sg->tape = std::make_unique<Tape>();
    Tape& t = *sg->tape;
    sg->pv = nn::bind(t, m.params);
    sg->info = reduced::make_dirichlet_info(*in.mesh, in.dirichlet, m.cfg.p_free);
    if (sg->info.n_fixed != m.cfg.n_fixed_partitions)
        throw std::invalid_argument(
            "build_sample: sample boundary-partition count does not match the model");
    sg->p_total = m.cfg.p_free + sg->info.n_fixed;
    sg->edges = reduced::complete_graph_edges(sg->p_total);
    sg->d0 = reduced::reduced_incidence(sg->p_total);

    // geometry pipeline
    Var features = t.constant(Tensor::from_dense(*in.features));
    sg->z = nn::anchor_encoder(t, sg->pv, "encoder", features, m.cfg.encoder, anchor_rng);
    sg->c_w = nn::perceiver_pool(t, sg->pv, "pool_w", sg->z, m.cfg.encoder.n_heads);
    sg->c_f = nn::perceiver_pool(t, sg->pv, "pool_f", sg->z, m.cfg.encoder.n_heads);
    sg->w = reduced::partition_forward(t, sg->z, sg->c_w, sg->pv, "wmodel", m.cfg.p_free,
                                       sg->info);
    auto edges_ptr =
        std::make_shared<const std::vector<std::array<std::size_t, 2>>>(sg->edges);
    sg->proj = reduced::project_on_tape(t, sg->w, *in.fine, sg->d0, edges_ptr);

    // per-sample zeta kept for telemetry and the budget refresh; training with
    // a moving-average budget must survive transiently singular projections
    try {
        sg->zeta_sample =
            flux::compute_zeta(sg->k_free_values(), sg->d0, m.cfg.flux_cfg.epsilon);
    } catch (const std::runtime_error&) {
        if (zeta_eff <= 0.0) throw;  // the per-sample budget genuinely needs it
        sg->zeta_sample = 0.0;
    }
    sg->zeta_eff = zeta_eff > 0.0 ? zeta_eff : 0.5 * sg->zeta_sample;

    sg->fv = flux::build_flux_operators(t, sg->pv, "flux", sg->c_f, m.cfg.flux_cfg,
                                        sg->p_total, sg->edges.size(), sg->zeta_eff);

    Var u = t.input(Tensor(m.cfg.p_free, m.cfg.fields));
    auto rv = solver::residual_on_tape(t, u, sg->proj.k, sg->d0, sg->edges, sg->fv,
                                       sg->info.fixed_coeffs, m.cfg.flux_cfg.epsilon);
    sg->u_full = rv.u_full;
    sg->divergence = rv.divergence;
    sg->sys.tape = sg->tape.get();
    sg->sys.u = u;
    sg->sys.residual = rv.residual;
    return sg;
}

namespace {

Var loss_on_tape(SampleGraph& sg, const SampleInputs& in, Var& u_fine_out) {
    Tape& t = *sg.tape;
    u_fine_out = t.matmul(t.transpose(sg.w), sg.u_full);  // N x fields
    Var diff = t.sub(u_fine_out, t.constant(Tensor::from_dense(*in.target)));
    return t.sum(t.mul(diff, diff));
}

}  // namespace

SampleEval evaluate_solution(const SampleGraph& sg, const SampleInputs& in) {
    SampleEval ev;
    const Tensor& wv = sg.tape->val(sg.w);
    const Tensor& uv = sg.tape->val(sg.u_full);
    const std::size_t n = wv.cols, fields = uv.cols;
    ev.u_fine = DenseMatrix(n, fields);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t f = 0; f < fields; ++f) {
            double s = 0.0;
            for (std::size_t p = 0; p < wv.rows; ++p) s += wv(p, j) * uv(p, f);
            ev.u_fine(j, f) = s;
        }
    for (const auto& [name, ub] : in.dirichlet) {
        const auto& nodes = in.mesh->sidesets.at(name).nodes;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            ev.boundary_error =
                std::max(ev.boundary_error, std::abs(ev.u_fine(nodes[i], 0) - ub[i]));
    }
    if (in.target) {
        double num = 0.0, den = 0.0, l = 0.0;
        for (std::size_t k = 0; k < ev.u_fine.a.size(); ++k) {
            const double d = ev.u_fine.a[k] - in.target->a[k];
            num += d * d;
            den += in.target->a[k] * in.target->a[k];
            l += d * d;
        }
        ev.loss = l;
        ev.rel_l2 = den > 0.0 ? std::sqrt(num / den) : -1.0;
    }
    return ev;
}

double adjoint_gradients(SampleGraph& sg, const SampleInputs& in,
                         std::vector<Tensor>& grad_accum) {
    if (!in.target) throw std::invalid_argument("adjoint_gradients: sample has no target");
    Tape& t = *sg.tape;
    Var u_fine;
    Var loss = loss_on_tape(sg, in, u_fine);
    // dL/du at fixed theta seeds the adjoint solve
    t.backward(loss);
    std::vector<double> lgrad_u = t.grad(sg.sys.u).v;
    std::vector<double> lambda = solver::adjoint_lambda(sg.sys, lgrad_u);
    Tensor neg_lambda(sg.sys.residual.rows, sg.sys.residual.cols);
    for (std::size_t i = 0; i < lambda.size(); ++i) neg_lambda.v[i] = -lambda[i];
    Var total = t.add(loss, t.dot(t.constant(std::move(neg_lambda)), sg.sys.residual));
    t.backward(total);
    if (grad_accum.size() != sg.pv.vars.size())
        grad_accum.assign(sg.pv.vars.size(), Tensor{});
    for (std::size_t i = 0; i < sg.pv.vars.size(); ++i) {
        Tensor g = t.grad(sg.pv.vars[i]);
        if (grad_accum[i].v.empty())
            grad_accum[i] = std::move(g);
        else
            for (std::size_t k = 0; k < g.v.size(); ++k) grad_accum[i].v[k] += g.v[k];
    }
    return t.val(loss).v[0];
}

}  // namespace geonew::model
