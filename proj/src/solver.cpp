#include "geonew/solver.hpp"

#include <cmath>
#include <stdexcept>

namespace geonew::solver {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using linalg::DenseMatrix;

ResidualVars residual_on_tape(Tape& t, Var u_free, Var k, const DenseMatrix& d0_reduced,
                              const std::vector<std::array<std::size_t, 2>>& edges,
                              const flux::FluxVars& fv,
                              const std::vector<double>& fixed_coeffs, double epsilon) {
    const std::size_t fields = u_free.cols;
    ResidualVars out;
    if (fixed_coeffs.empty()) {
        out.u_full = u_free;
    } else {
        Tensor fixed(fixed_coeffs.size(), fields);
        for (std::size_t r = 0; r < fixed_coeffs.size(); ++r)
            for (std::size_t f = 0; f < fields; ++f) fixed(r, f) = fixed_coeffs[r];
        out.u_full = t.concat_rows(u_free, t.constant(std::move(fixed)));
    }
    Var xi = flux::edge_features(t, out.u_full, edges, fv.pi.weight, fv.mean_channel);
    Var fprime = flux::primal_flux(t, xi, fv);
    Var fdual = flux::dual_flux(t, fprime, fv);
    Var diffusion = t.smul(t.matmul(k, out.u_full), epsilon);
    out.divergence =
        t.matmul(t.constant(Tensor::from_dense(linalg::transpose(d0_reduced))), fdual);
    Var g_full = t.add(diffusion, out.divergence);
    out.residual = t.slice_rows(g_full, 0, u_free.rows);  // free partitions come first
    return out;
}

DenseMatrix jacobian(ResidualSystem& sys) {
    const std::size_t n = sys.dim();
    DenseMatrix j(n, n);
    Tensor seed(sys.residual.rows, sys.residual.cols);
    for (std::size_t r = 0; r < n; ++r) {
        seed.v.assign(n, 0.0);
        seed.v[r] = 1.0;
        sys.tape->backward(sys.residual, seed);
        Tensor g = sys.tape->grad(sys.u);
        for (std::size_t c = 0; c < n; ++c) j(r, c) = g.v[c];
    }
    return j;
}

namespace {

double residual_norm_at(ResidualSystem& sys, const std::vector<double>& u) {
    Tensor ut(sys.u.rows, sys.u.cols);
    ut.v = u;
    sys.tape->set_value(sys.u, std::move(ut));
    sys.tape->replay_dependents(sys.u);
    return linalg::norm2(sys.tape->val(sys.residual).v);
}

}  // namespace

SolveResult newton_solve(ResidualSystem& sys, const SolveConfig& cfg, std::mt19937_64& rng) {
    const std::size_t n = sys.dim();
    std::normal_distribution<double> dist(0.0, 1.0);
    SolveResult res;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        std::vector<double> u(n);
        for (auto& x : u) x = dist(rng);
        double gnorm = residual_norm_at(sys, u);
        res.iterations = 0;
        while (res.iterations < cfg.max_iter && gnorm > cfg.tol && std::isfinite(gnorm)) {
            DenseMatrix j = jacobian(sys);
            std::vector<double> g = sys.tape->val(sys.residual).v;
            std::vector<double> step;
            try {
                step = linalg::lu_factor(std::move(j)).solve(g);
            } catch (const std::runtime_error&) {
                break;  // singular Jacobian: give up on this initialization
            }
            double damping = 1.0;
            std::vector<double> u_new(n);
            double gnorm_new = 0.0;
            for (int halvings = 0;; ++halvings) {
                for (std::size_t i = 0; i < n; ++i) u_new[i] = u[i] - damping * step[i];
                gnorm_new = residual_norm_at(sys, u_new);
                if (!cfg.line_search || gnorm_new <= gnorm || halvings >= 8) break;
                damping *= 0.5;
            }
            u = u_new;
            gnorm = gnorm_new;
            ++res.iterations;
        }
        // leave the tape's state at the final iterate
        gnorm = residual_norm_at(sys, u);
        res.u_free = std::move(u);
        res.residual_norm = gnorm;
        res.converged = std::isfinite(gnorm) && gnorm <= cfg.tol;
        res.retries = attempt;
        if (res.converged) break;
    }
    return res;
}

std::vector<double> adjoint_lambda(ResidualSystem& sys,
                                   const std::vector<double>& loss_grad_u) {
    DenseMatrix j = jacobian(sys);
    return linalg::lu_factor(std::move(j)).solve_transposed(loss_grad_u);
}

bool accept_batch(const std::vector<bool>& converged, double threshold) {
    if (converged.empty()) return false;
    std::size_t n_conv = 0;
    for (bool c : converged) n_conv += c ? 1 : 0;
    return double(n_conv) >= threshold * double(converged.size()) && n_conv > 0;
}

}  // namespace geonew::solver
