#include "geonew/geofeat.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace geonew::geofeat {

using linalg::DenseMatrix;

namespace {

struct InteriorEig {
    std::vector<std::size_t> interior;  // node indices
    std::vector<double> eigenvalues;    // selected, ascending
    DenseMatrix eigenvectors;           // interior x selected, M-orthonormal
};

InteriorEig interior_eigensolve(const feec::FineOperators& ops, const mesh::Mesh& m,
                                int n_eigs) {
    InteriorEig out;
    out.interior = m.interior_nodes();
    const std::size_t ni = out.interior.size();
    if (n_eigs < 1 || std::size_t(n_eigs) > ni) {
        std::ostringstream os;
        os << "n_eigs = " << n_eigs << " exceeds interior size " << ni;
        throw std::invalid_argument(os.str());
    }
    DenseMatrix k = linalg::submatrix(ops.k.to_dense(), out.interior, out.interior);
    DenseMatrix mm = linalg::submatrix(ops.m0.to_dense(), out.interior, out.interior);
    // kill rounding skew before the eigensolve
    for (std::size_t i = 0; i < ni; ++i)
        for (std::size_t j = i + 1; j < ni; ++j) {
            k(i, j) = k(j, i) = 0.5 * (k(i, j) + k(j, i));
            mm(i, j) = mm(j, i) = 0.5 * (mm(i, j) + mm(j, i));
        }
    auto eig = linalg::generalized_sym_eig(k, mm);
    // include whole near-degenerate clusters (relative gap < 1e-8)
    std::size_t sel = std::size_t(n_eigs);
    while (sel < ni &&
           std::abs(eig.eigenvalues[sel] - eig.eigenvalues[sel - 1]) <
               1e-8 * std::max(std::abs(eig.eigenvalues[sel]), 1e-300))
        ++sel;
    out.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + sel);
    out.eigenvectors = DenseMatrix(ni, sel);
    for (std::size_t i = 0; i < ni; ++i)
        for (std::size_t j = 0; j < sel; ++j) out.eigenvectors(i, j) = eig.eigenvectors(i, j);
    return out;
}

}  // namespace

std::vector<double> default_times(const feec::FineOperators& ops, const mesh::Mesh& m,
                                  int n_times, int n_eigs) {
    auto eig = interior_eigensolve(ops, m, n_eigs);
    const double lmin = eig.eigenvalues.front();
    const double lmax = eig.eigenvalues.back();
    const double tmin = 4.0 * std::log(10.0) / lmax;
    const double tmax = 4.0 * std::log(10.0) / lmin;
    std::vector<double> times(n_times);
    for (int i = 0; i < n_times; ++i) {
        const double f = n_times == 1 ? 0.0 : double(i) / double(n_times - 1);
        times[i] = std::exp(std::log(tmin) + f * (std::log(tmax) - std::log(tmin)));
    }
    return times;
}

std::pair<DenseMatrix, DenseMatrix> heat_kernel_signature(const feec::FineOperators& ops,
                                                          const mesh::Mesh& m,
                                                          const std::vector<double>& times,
                                                          int n_eigs) {
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < 0.0) throw std::invalid_argument("diffusion times must be nonnegative");
        if (i > 0 && times[i] < times[i - 1])
            throw std::invalid_argument("diffusion times must be ascending");
    }
    auto eig = interior_eigensolve(ops, m, n_eigs);
    const std::size_t n = m.n_nodes();
    const std::size_t t_cnt = times.size();
    DenseMatrix hks(n, t_cnt);
    for (std::size_t ii = 0; ii < eig.interior.size(); ++ii) {
        const std::size_t node = eig.interior[ii];
        for (std::size_t t = 0; t < t_cnt; ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < eig.eigenvalues.size(); ++k) {
                const double phi = eig.eigenvectors(ii, k);
                s += phi * phi * std::exp(-times[t] * eig.eigenvalues[k]);
            }
            hks(node, t) = s;
        }
    }
    // spatial gradients: per-triangle P1 gradient, area-weight-averaged to nodes
    DenseMatrix grad(n, 2 * t_cnt);
    std::vector<double> weight(n, 0.0);
    for (std::size_t tr = 0; tr < m.triangles.size(); ++tr) {
        const auto& tri = m.triangles[tr];
        const double area = mesh::triangle_area(m, tr);
        const auto& p0 = m.nodes[tri[0]];
        const auto& p1 = m.nodes[tri[1]];
        const auto& p2 = m.nodes[tri[2]];
        const double inv2a = 1.0 / (2.0 * area);
        const double gx[3] = {(p1[1] - p2[1]) * inv2a, (p2[1] - p0[1]) * inv2a,
                              (p0[1] - p1[1]) * inv2a};
        const double gy[3] = {(p2[0] - p1[0]) * inv2a, (p0[0] - p2[0]) * inv2a,
                              (p1[0] - p0[0]) * inv2a};
        for (std::size_t t = 0; t < t_cnt; ++t) {
            double hx = 0.0, hy = 0.0;
            for (int v = 0; v < 3; ++v) {
                hx += hks(tri[v], t) * gx[v];
                hy += hks(tri[v], t) * gy[v];
            }
            for (int v = 0; v < 3; ++v) {
                grad(tri[v], 2 * t) += area * hx;
                grad(tri[v], 2 * t + 1) += area * hy;
            }
        }
        for (int v = 0; v < 3; ++v) weight[tri[v]] += area;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 2 * t_cnt; ++c) grad(i, c) /= weight[i];
    return {std::move(hks), std::move(grad)};
}

DenseMatrix harmonic_coordinates(
    const feec::FineOperators& ops, const mesh::Mesh& m,
    const std::vector<std::pair<std::string, std::string>>& group_pairs) {
    const std::size_t n = m.n_nodes();
    DenseMatrix out(n, group_pairs.size());
    const DenseMatrix k = ops.k.to_dense();
    for (std::size_t p = 0; p < group_pairs.size(); ++p) {
        const auto& gi = m.sidesets.at(group_pairs[p].first);
        const auto& gj = m.sidesets.at(group_pairs[p].second);
        if (gi.nodes.empty() || gj.nodes.empty())
            throw std::invalid_argument("harmonic_coordinates: empty boundary group");
        std::set<std::size_t> ones(gi.nodes.begin(), gi.nodes.end());
        for (std::size_t node : gj.nodes)
            if (ones.count(node))
                throw std::invalid_argument("harmonic_coordinates: boundary groups overlap");
        std::set<std::size_t> fixed = ones;
        fixed.insert(gj.nodes.begin(), gj.nodes.end());
        std::vector<std::size_t> free_idx;
        for (std::size_t i = 0; i < n; ++i)
            if (!fixed.count(i)) free_idx.push_back(i);
        // lift boundary data: K_ff psi_f = -K_fc psi_c, psi_c one on gamma_i
        std::vector<double> rhs(free_idx.size(), 0.0);
        for (std::size_t r = 0; r < free_idx.size(); ++r)
            for (std::size_t c : ones) rhs[r] -= k(free_idx[r], c);
        DenseMatrix kff = linalg::submatrix(k, free_idx, free_idx);
        for (std::size_t i = 0; i < kff.rows; ++i)
            for (std::size_t j = i + 1; j < kff.cols; ++j)
                kff(i, j) = kff(j, i) = 0.5 * (kff(i, j) + kff(j, i));
        auto psi_f = linalg::solve_spd(kff, rhs);
        for (std::size_t c : ones) out(c, p) = 1.0;
        for (std::size_t r = 0; r < free_idx.size(); ++r) out(free_idx[r], p) = psi_f[r];
    }
    return out;
}

DenseMatrix distance_field(const mesh::Mesh& m) {
    const std::size_t n = m.n_nodes();
    DenseMatrix sdf(n, 1);
    auto edges = mesh::boundary_edges(m);
    auto mask = m.boundary_mask();
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) continue;  // boundary nodes stay exactly 0
        const double px = m.nodes[i][0], py = m.nodes[i][1];
        double best = 1e300;
        for (const auto& e : edges) {
            const auto& a = m.nodes[e.a];
            const auto& b = m.nodes[e.b];
            const double vx = b[0] - a[0], vy = b[1] - a[1];
            const double wx = px - a[0], wy = py - a[1];
            const double len2 = vx * vx + vy * vy;
            const double t = std::clamp(len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0, 0.0, 1.0);
            const double dx = wx - t * vx, dy = wy - t * vy;
            best = std::min(best, std::hypot(dx, dy));
        }
        sdf(i, 0) = best;
    }
    return sdf;
}

DenseMatrix sideset_labels(const mesh::Mesh& m) {
    DenseMatrix labels(m.n_nodes(), mesh::kNumSidesetLabels);
    for (const auto& [name, ss] : m.sidesets)
        for (std::size_t i : ss.nodes) labels(i, std::size_t(ss.label)) = 1.0;
    return labels;
}

DenseMatrix assemble_features(const DenseMatrix& hks, const DenseMatrix& hks_grad,
                              const DenseMatrix& harmonic, const DenseMatrix& sdf,
                              const DenseMatrix& labels) {
    const std::size_t n = hks.rows;
    if (hks_grad.rows != n || harmonic.rows != n || sdf.rows != n || labels.rows != n)
        throw std::invalid_argument("assemble_features: row-count mismatch");
    const std::size_t d = hks.cols + hks_grad.cols + harmonic.cols + sdf.cols + labels.cols;
    DenseMatrix f(n, d);
    std::size_t col = 0;
    auto put = [&](const DenseMatrix& src) {
        for (std::size_t j = 0; j < src.cols; ++j, ++col)
            for (std::size_t i = 0; i < n; ++i) f(i, col) = src(i, j);
    };
    put(hks);
    put(hks_grad);
    put(harmonic);
    put(sdf);
    const std::size_t n_std = col;
    put(labels);
    // standardize non-label columns per mesh
    for (std::size_t j = 0; j < n_std; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += f(i, j);
        mean /= double(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = f(i, j) - mean;
            var += c * c;
        }
        var /= double(n);
        if (var < 1e-28) {
            for (std::size_t i = 0; i < n; ++i) f(i, j) = 0.0;
        } else {
            const double inv = 1.0 / std::sqrt(var);
            for (std::size_t i = 0; i < n; ++i) f(i, j) = (f(i, j) - mean) * inv;
        }
    }
    return f;
}

GeoFeatures compute(const mesh::Mesh& m, const feec::FineOperators& ops,
                    const FeatureConfig& cfg) {
    GeoFeatures g;
    const int n_eigs =
        int(std::min<std::size_t>(std::size_t(cfg.n_eigs), m.interior_nodes().size()));
    g.times = default_times(ops, m, cfg.n_times, n_eigs);
    auto [hks, grad] = heat_kernel_signature(ops, m, g.times, n_eigs);
    g.hks = std::move(hks);
    g.hks_grad = std::move(grad);
    g.harmonic = harmonic_coordinates(ops, m, cfg.harmonic_pairs);
    g.sdf = distance_field(m);
    g.labels = sideset_labels(m);
    g.features = assemble_features(g.hks, g.hks_grad, g.harmonic, g.sdf, g.labels);
    return g;
}

}  // namespace geonew::geofeat
