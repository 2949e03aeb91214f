#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "geonew/autodiff.hpp"
#include "geonew/feec.hpp"
#include "geonew/flux.hpp"
#include "geonew/geofeat.hpp"
#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"
#include "geonew/nn.hpp"
#include "geonew/reduced.hpp"
#include "geonew/solver.hpp"

namespace geonew::model {

struct ModelConfig {
    nn::EncoderConfig encoder;
    std::size_t n_context = 4;
    std::size_t p_free = 8;
    std::size_t w_hidden = 64;
    flux::FluxConfig flux_cfg;
    std::size_t fields = 1;
    std::size_t d_in = 31;  // geometry feature dimension
    // boundary partitions per sample (2 per sign-definite Dirichlet sideset);
    // the Hodge head is sized for the resulting fixed reduced dimension
    std::size_t n_fixed_partitions = 4;
    std::uint64_t seed = 1;

    std::size_t p_total() const { return p_free + n_fixed_partitions; }
    std::size_t p1() const { return p_total() * (p_total() - 1) / 2; }
};

/// All trainable state: encoder, pooling heads, partition model, flux
/// hypernetwork and Hodge head, plus the Lipschitz budget.
struct GeoNewModel {
    ModelConfig cfg;
    nn::ParamBundle params;
    flux::LipschitzBudget budget;

    static GeoNewModel init(const ModelConfig& cfg);
};

struct SampleInputs {
    const mesh::Mesh* mesh = nullptr;
    const feec::FineOperators* fine = nullptr;
    const linalg::DenseMatrix* features = nullptr;  // N x d_in
    std::vector<std::pair<std::string, std::vector<double>>> dirichlet;
    const linalg::DenseMatrix* target = nullptr;  // N x fields (optional)
};

/// One sample's full differentiable graph: geometry pipeline, reduced
/// operators, flux, and the residual system for the Newton solve.
struct SampleGraph {
    std::unique_ptr<ad::Tape> tape;
    nn::ParamVars pv;
    reduced::DirichletInfo info;
    std::vector<std::array<std::size_t, 2>> edges;
    linalg::DenseMatrix d0;
    ad::Var z, c_w, c_f, w, u_full, divergence;
    reduced::ProjectedVars proj;
    flux::FluxVars fv;
    solver::ResidualSystem sys;
    std::size_t p_total = 0;
    double zeta_eff = 0.0;
    double zeta_sample = 0.0;  // per-sample zeta (always computed)

    linalg::DenseMatrix k_free_values() const;
    linalg::DenseMatrix w_values() const;
};

/// Build the per-sample graph. zeta_eff <= 0 requests the per-sample budget
/// (zeta computed from this sample's projected stiffness); otherwise the
/// given moving-average budget is used for the amplitude caps.
std::unique_ptr<SampleGraph> build_sample(const GeoNewModel& m, const SampleInputs& in,
                                          double zeta_eff, std::mt19937_64& anchor_rng);

struct SampleEval {
    double loss = 0.0;              // sum over fine nodes of squared error
    linalg::DenseMatrix u_fine;     // N x fields reconstruction
    double boundary_error = 0.0;    // max |u_fine - u_b| over Dirichlet nodes
    double rel_l2 = -1.0;           // ||u_fine - target|| / ||target||, -1 if no target
};

/// Reconstruction and error metrics at the tape's current state.
SampleEval evaluate_solution(const SampleGraph& sg, const SampleInputs& in);

/// Adjoint gradient of the sum-squared reconstruction loss at the converged
/// state: solves J^T lambda = dL/du and runs one reverse pass seeded with
/// the loss and -lambda. Accumulates into grad_accum (parameter order).
/// Returns the loss value.
double adjoint_gradients(SampleGraph& sg, const SampleInputs& in,
                         std::vector<ad::Tensor>& grad_accum);

}  // namespace geonew::model
