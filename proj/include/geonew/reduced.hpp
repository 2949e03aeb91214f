#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "geonew/autodiff.hpp"
#include "geonew/feec.hpp"
#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"
#include "geonew/nn.hpp"

namespace geonew::reduced {

/// One fixed boundary partition: a nonnegative row over all fine nodes
/// (supported on its sideset) with a fixed reduced coefficient.
struct BoundaryPartition {
    std::string sideset;
    std::vector<double> row;
    double coeff = 0.0;
};

/// Boundary-adapted partitions for one Dirichlet sideset with data u_b
/// (aligned with the sideset node list):
///   psi = u_b / s with coefficient s = sum(u_b), plus the complement with
///   coefficient 0, so u = s * psi = u_b exactly on the sideset.
/// u_b == 0 degenerates to a uniform zero-coefficient pair; mixed-sign data
/// splits into positive and negative parts (disjoint supports) plus one
/// complement row.
std::vector<BoundaryPartition> dirichlet_partitions(const mesh::Mesh& m,
                                                    const std::string& sideset,
                                                    const std::vector<double>& u_b);

struct PartitionMatrix {
    linalg::DenseMatrix w;  // P_total x N, column sums 1, entries >= 0
    std::size_t p_free = 0;
    std::vector<BoundaryPartition> boundary;  // rows p_free .. P_total-1, in order

    std::size_t p_total() const { return w.rows; }
    std::vector<std::size_t> free_indices() const;
    std::vector<double> fixed_coeffs() const;
};

struct ReducedSystem {
    linalg::DenseMatrix m0;  // P x P
    linalg::DenseMatrix m1;  // P1 x P1
    linalg::DenseMatrix k;   // P x P, = d0^T m1 d0
    linalg::DenseMatrix d0;  // P1 x P incidence of the complete reduced graph
    std::vector<std::array<std::size_t, 2>> edges;  // pairs (i<j), lexicographic
    std::size_t p_total = 0;
    std::size_t p1 = 0;
    std::vector<std::size_t> free_idx;
    std::vector<double> fixed_coeffs;

    linalg::DenseMatrix k_free() const;
};

std::vector<std::array<std::size_t, 2>> complete_graph_edges(std::size_t p);
linalg::DenseMatrix reduced_incidence(std::size_t p);

/// Projection of fine operators through a column-stochastic partition matrix:
/// m0 = W M0' W^T, W1[(ij),(ab)] = W_ia W_jb - W_ib W_ja, m1 = W1 M1' W1^T,
/// k = d0^T m1 d0.
ReducedSystem project_operators(const feec::FineOperators& fine, const PartitionMatrix& w);

/// Fine nodal values of the reduced expansion: u_fine = W^T u_reduced.
linalg::DenseMatrix reconstruct_field(const linalg::DenseMatrix& u_reduced,
                                      const PartitionMatrix& w);

/// Block-diagonal assembly of per-field reduced operators (vector problems
/// use an independent basis per field; coupling enters only through the flux).
linalg::DenseMatrix block_diag(const std::vector<linalg::DenseMatrix>& blocks);

// ---- differentiable path ----------------------------------------------

/// Per-sample Dirichlet data: fixed boundary rows, the interior mask for the
/// learned partitions, and fixed coefficients.
struct DirichletInfo {
    std::vector<BoundaryPartition> partitions;
    ad::Tensor boundary_block;  // n_fixed x N constant rows
    ad::Tensor interior_mask;   // N x p_free: 1 on interior rows, 0 on Dirichlet
    std::vector<double> fixed_coeffs;
    std::size_t n_fixed = 0;
};
DirichletInfo make_dirichlet_info(
    const mesh::Mesh& m,
    const std::vector<std::pair<std::string, std::vector<double>>>& dirichlet_data,
    std::size_t p_free);

/// Partition model parameters: a weight-shared MLP on [z | broadcast c_w]
/// plus an alpha-scaled linear skip producing the P_free logits per node.
void declare_partition_model(nn::ParamBundle& p, const std::string& prefix,
                             std::size_t d_model, std::size_t n_context, std::size_t hidden,
                             std::size_t p_free, std::mt19937_64& rng);

/// Softmax partitions over the free rows per node; Dirichlet node columns are
/// exactly zero in the free rows and carried by the constant boundary block.
/// Returns W: P_total x N with column sums 1.
ad::Var partition_forward(ad::Tape& t, ad::Var z, ad::Var c_w, const nn::ParamVars& p,
                          const std::string& prefix, std::size_t p_free,
                          const DirichletInfo& info);

struct ProjectedVars {
    ad::Var w1;  // P1 x E
    ad::Var m1;  // P1 x P1
    ad::Var k;   // P x P
    ad::Var m0;  // P x P (only if with_m0)
    bool has_m0 = false;
};

/// Tape-side projection; d0_reduced and the reduced edge list are constants
/// precomputed once for the reduced dimension.
ProjectedVars project_on_tape(ad::Tape& t, ad::Var w, const feec::FineOperators& fine,
                              const linalg::DenseMatrix& d0_reduced,
                              std::shared_ptr<const std::vector<std::array<std::size_t, 2>>>
                                  reduced_edges,
                              bool with_m0 = false);

}  // namespace geonew::reduced
