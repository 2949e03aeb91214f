#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "geonew/autodiff.hpp"
#include "geonew/linalg.hpp"
#include "geonew/nn.hpp"

namespace geonew::flux {

struct FluxConfig {
    int d_op = 16;             // operator-space dimension of the edge projection
    bool mean_channel = true;  // signed-mean feature channel on/off
    double epsilon = 1.0;      // diffusion coefficient in the residual
    double eps_h = 1e-2;       // Hodge regularization H = HH^T + eps_h I
    std::size_t hyper_hidden = 64;
    std::size_t hodge_hidden = 64;
    double beta_log_init = -12.0;
    double gamma_log_init = -12.0;  // log-amplitude; paper-aligned runs use -2
};

/// Moving-average Lipschitz budget. zeta is refreshed periodically from
/// per-sample values; the effective cap is half of it.
struct LipschitzBudget {
    double zeta = 0.0;
    bool initialized = false;
    double decay = 0.9;

    void update(double sample_zeta) {
        zeta = initialized ? decay * zeta + (1.0 - decay) * sample_zeta : sample_zeta;
        initialized = true;
    }
    double zeta_eff() const { return 0.5 * zeta; }
};

/// zeta = 0.99 / (epsilon ||K_free^-1|| ||d0||), with ||K_free^-1|| from the
/// smallest eigenvalue. Throws std::runtime_error if k_free is singular
/// (no Dirichlet constraints present).
double compute_zeta(const linalg::DenseMatrix& k_free, const linalg::DenseMatrix& d0,
                    double epsilon);

/// Worst-case fan-out of the stacked edge-feature map: each partition feeds
/// P-1 edges and the difference/mean channels add a factor sqrt(2).
double edge_fanout(std::size_t p_total);

/// Per-amplitude cap so the certified dual-flux Lipschitz constant stays
/// below zeta_eff even at worst-case unit gains of Pi/A/B/C and ||H|| up to
/// 1 + eps_h.
double amplitude_cap(double zeta_eff, std::size_t p_total, double eps_h);

struct FluxVars {
    nn::BoundedWeight pi;  // d_op x F
    nn::BoundedWeight a;   // d_op x 2 d_op
    nn::BoundedWeight b;   // 2 d_op x 2 d_op
    nn::BoundedWeight c;   // d_op x 2 d_op
    ad::Var beta_eff;      // 1x1 capped amplitude
    ad::Var gamma_eff;     // 1x1 capped amplitude
    ad::Var hodge;         // P1 x P1 SPD
    ad::Var hodge_factor_bound;  // 1x1 certified ||H_factor||_2 bound
    double amp_cap = 0.0;
    double eps_h = 0.0;
    double fanout = 0.0;
    bool mean_channel = true;
};

void declare_flux_model(nn::ParamBundle& p, const std::string& prefix, std::size_t fields,
                        const FluxConfig& cfg, std::size_t d_ctx, std::size_t p1,
                        std::mt19937_64& rng);

/// Base operators plus zero-initialized hypernetwork deltas, all routed
/// through the l-inf spectral normalization; amplitudes beta' = min(beta, cap),
/// gamma' = min(gamma, cap); Hodge map H = HH^T + eps_h I from its own
/// zero-initialized head.
FluxVars build_flux_operators(ad::Tape& t, const nn::ParamVars& p, const std::string& prefix,
                              ad::Var c_f, const FluxConfig& cfg, std::size_t p_total,
                              std::size_t p1, double zeta_eff);

/// Edge features xi_ij = [Pi^T(u_i - u_j), (-1)^{s(i,j)} 1/2 Pi^T(u_i + u_j)]
/// per reduced edge; s(i,j) = 1 when i > j, making xi odd under orientation
/// swap. pi_weight is the (possibly normalized) d_op x F projection.
ad::Var edge_features(ad::Tape& t, ad::Var u_full,
                      const std::vector<std::array<std::size_t, 2>>& edges, ad::Var pi_weight,
                      bool mean_channel);

/// F'_ij = beta' A xi + gamma' C tanh(B xi), mapped back to field dimension
/// through the same projection; bias-free and odd in xi, so exactly
/// antisymmetric under edge-orientation swap.
ad::Var primal_flux(ad::Tape& t, ad::Var xi, const FluxVars& fv);

ad::Var dual_flux(ad::Tape& t, ad::Var primal, const FluxVars& fv);

/// Certified Lipschitz constant of u -> H F'(u) (Frobenius norms), from the
/// tape's current values.
double certified_lipschitz(const ad::Tape& t, const FluxVars& fv);

}  // namespace geonew::flux
