#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <vector>

#include "geonew/autodiff.hpp"
#include "geonew/flux.hpp"
#include "geonew/linalg.hpp"

namespace geonew::solver {

struct SolveConfig {
    double tol = 1e-6;
    int max_iter = 200;
    double accept_threshold = 0.8;  // batch acceptance fraction
    bool line_search = true;        // backtracking guard, off for invariance tests
    int max_retries = 0;            // fresh-init retries on non-convergence
};

struct SolveResult {
    std::vector<double> u_free;
    bool converged = false;
    int iterations = 0;
    double residual_norm = 0.0;
    int retries = 0;
};

/// A residual graph on a tape: state leaf u (n_free x fields) and the
/// residual var G(u) of the same shape.
struct ResidualSystem {
    ad::Tape* tape = nullptr;
    ad::Var u;
    ad::Var residual;
    std::size_t dim() const { return u.rows * u.cols; }
};

struct ResidualVars {
    ad::Var residual;    // n_free x fields
    ad::Var u_full;      // p_total x fields (free rows then fixed coefficients)
    ad::Var divergence;  // p_total x fields, d0^T of the dual flux
};

/// G(u)_free = eps K u + d0^T H F'(u) restricted to the free rows, with the
/// fixed Dirichlet coefficients substituted before the flux evaluation.
/// The source term is excluded.
ResidualVars residual_on_tape(ad::Tape& t, ad::Var u_free, ad::Var k,
                              const linalg::DenseMatrix& d0_reduced,
                              const std::vector<std::array<std::size_t, 2>>& edges,
                              const flux::FluxVars& fv,
                              const std::vector<double>& fixed_coeffs, double epsilon);

/// Exact dense Jacobian dG/du at the tape's current state, one reverse pass
/// per residual component.
linalg::DenseMatrix jacobian(ResidualSystem& sys);

/// Damped Newton iteration u <- u - J^-1 G from a standard-normal start.
/// Deterministic given the rng state.
SolveResult newton_solve(ResidualSystem& sys, const SolveConfig& cfg, std::mt19937_64& rng);

/// Solve J(u*)^T lambda = loss_grad_u. Throws std::runtime_error on a
/// singular Jacobian (signals a violated contraction bound).
std::vector<double> adjoint_lambda(ResidualSystem& sys,
                                   const std::vector<double>& loss_grad_u);

/// Appendix-D batch acceptance: a batch is accepted when at least
/// `threshold` of its samples converged; only converged samples contribute.
bool accept_batch(const std::vector<bool>& converged, double threshold);

}  // namespace geonew::solver
