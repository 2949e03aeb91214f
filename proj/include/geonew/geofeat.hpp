#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "geonew/feec.hpp"
#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"

namespace geonew::geofeat {

struct FeatureConfig {
    int n_times = 8;
    int n_eigs = 32;
    // sideset pairs (gamma_i = 1, gamma_j = 0) for the harmonic coordinates
    std::vector<std::pair<std::string, std::string>> harmonic_pairs;
};

/// Per-node geometry features. Column layout of `features`:
/// [hks (T) | hks_grad (2T: x,y per time) | harmonic (H) | sdf (1) | labels (5)],
/// non-label columns standardized per mesh (zero mean, unit variance;
/// constant columns left at 0).
struct GeoFeatures {
    linalg::DenseMatrix hks;       // N x T, boundary rows zero
    linalg::DenseMatrix hks_grad;  // N x 2T
    linalg::DenseMatrix harmonic;  // N x H, values in [0, 1]
    linalg::DenseMatrix sdf;       // N x 1, >= 0, zero on boundary nodes
    linalg::DenseMatrix labels;    // N x 5 one-hot (zero rows for interior)
    linalg::DenseMatrix features;  // N x d_in
    std::vector<double> times;
};

/// Heat kernel signature from the generalized eigenproblem on the interior
/// (Dirichlet-restricted) subspace: HKS(x,t) = sum_k phi_k(x)^2 exp(-t lambda_k).
/// Gradients are per-triangle P1 gradients area-averaged to nodes.
/// Eigenvalue clusters with relative gap < 1e-8 are always included whole.
std::pair<linalg::DenseMatrix, linalg::DenseMatrix> heat_kernel_signature(
    const feec::FineOperators& ops, const mesh::Mesh& m, const std::vector<double>& times,
    int n_eigs);

/// Log-uniform diffusion times over [4 ln10 / lambda_max, 4 ln10 / lambda_min]
/// of the computed interior spectrum.
std::vector<double> default_times(const feec::FineOperators& ops, const mesh::Mesh& m,
                                  int n_times, int n_eigs);

/// Discrete harmonic coordinates: Laplace solve with psi = 1 on the first
/// sideset of each pair, 0 on the second, natural elsewhere.
linalg::DenseMatrix harmonic_coordinates(
    const feec::FineOperators& ops, const mesh::Mesh& m,
    const std::vector<std::pair<std::string, std::string>>& group_pairs);

/// Minimum Euclidean distance to any boundary edge segment; exactly 0 on
/// boundary nodes.
linalg::DenseMatrix distance_field(const mesh::Mesh& m);

linalg::DenseMatrix sideset_labels(const mesh::Mesh& m);  // N x 5 one-hot

linalg::DenseMatrix assemble_features(const linalg::DenseMatrix& hks,
                                      const linalg::DenseMatrix& hks_grad,
                                      const linalg::DenseMatrix& harmonic,
                                      const linalg::DenseMatrix& sdf,
                                      const linalg::DenseMatrix& labels);

GeoFeatures compute(const mesh::Mesh& m, const feec::FineOperators& ops,
                    const FeatureConfig& cfg);

}  // namespace geonew::geofeat
