#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"

namespace geonew::feec {

/// Fine Whitney-form operators assembled from a mesh.
///   m0 : N x N nodal (0-form) mass matrix
///   m1 : E x E Whitney-1 (edge) mass matrix
///   d0 : E x N incidence, row (a,b) has -1 at a, +1 at b (a < b globally)
///   k  : N x N P1 stiffness, assembled directly; equals d0^T m1 d0
struct FineOperators {
    linalg::SparseMatrix m0, m1, d0, k;
    std::vector<std::array<std::size_t, 2>> edge_list;  // sorted pairs (a < b)
    std::size_t n_nodes = 0;
    std::size_t n_edges = 0;
};

/// Exact closed-form per-triangle integration (all integrands are quadratic
/// in the barycentric coordinates). Throws on degenerate triangles
/// (area below 1e-14 x bounding-box area).
FineOperators assemble(const mesh::Mesh& m);

/// Max-norm deviation ||d0^T m1 d0 - k||_max against the directly assembled
/// P1 stiffness.
double stiffness_identity_check(const FineOperators& ops);

}  // namespace geonew::feec
