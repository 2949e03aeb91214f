#include "geonew/feec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace geonew::feec {

using linalg::DenseMatrix;
using linalg::SparseMatrix;

FineOperators assemble(const mesh::Mesh& m) {
    m.validate();
    const std::size_t n = m.n_nodes();

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : m.nodes) {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
        ymin = std::min(ymin, p[1]);
        ymax = std::max(ymax, p[1]);
    }
    const double bbox_area = std::max((xmax - xmin) * (ymax - ymin), 1e-300);

    // global edge list, sorted pairs (a < b), lexicographic
    std::map<std::array<std::size_t, 2>, std::size_t> edge_id;
    std::vector<std::array<std::size_t, 2>> edges;
    for (const auto& tri : m.triangles)
        for (int e = 0; e < 3; ++e) {
            std::size_t a = tri[e], b = tri[(e + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_id.emplace(std::array<std::size_t, 2>{a, b}, 0);
        }
    for (auto& [key, id] : edge_id) {
        id = edges.size();
        edges.push_back(key);
    }
    const std::size_t ne = edges.size();

    std::vector<std::array<double, 3>> t_m0, t_m1, t_k, t_d0;
    t_m0.reserve(m.triangles.size() * 9);
    t_m1.reserve(m.triangles.size() * 9);
    t_k.reserve(m.triangles.size() * 9);

    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        const auto& tri = m.triangles[t];
        const double area = mesh::triangle_area(m, t);
        if (area <= 1e-14 * bbox_area) {
            std::ostringstream os;
            os << "degenerate triangle " << t << " (area " << area << ")";
            throw std::runtime_error(os.str());
        }
        // barycentric gradients: grad(lambda_i) constant per triangle
        const auto& p0 = m.nodes[tri[0]];
        const auto& p1 = m.nodes[tri[1]];
        const auto& p2 = m.nodes[tri[2]];
        const double inv2a = 1.0 / (2.0 * area);
        double gx[3], gy[3];
        gx[0] = (p1[1] - p2[1]) * inv2a;
        gy[0] = (p2[0] - p1[0]) * inv2a;
        gx[1] = (p2[1] - p0[1]) * inv2a;
        gy[1] = (p0[0] - p2[0]) * inv2a;
        gx[2] = (p0[1] - p1[1]) * inv2a;
        gy[2] = (p1[0] - p0[0]) * inv2a;

        double g[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) g[i][j] = gx[i] * gx[j] + gy[i] * gy[j];

        // m0: int lambda_i lambda_j = area/12 * (1 + delta_ij)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                t_m0.push_back({double(tri[i]), double(tri[j]),
                                area / 12.0 * (i == j ? 2.0 : 1.0)});
        // k: int grad(phi_i).grad(phi_j) = area * g_ij
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                t_k.push_back({double(tri[i]), double(tri[j]), area * g[i][j]});

        // m1: exact integral of (l_a grad l_b - l_b grad l_a).(l_c grad l_d - l_d grad l_c)
        // with global orientations a<b, c<d; int l_p l_q = area/12 (1+delta_pq).
        struct LocalEdge {
            int la, lb;          // local vertex indices with global(la) < global(lb)
            std::size_t gid;     // global edge id
        };
        LocalEdge le[3];
        int cnt = 0;
        const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        for (const auto& pr : pairs) {
            int u = pr[0], v = pr[1];
            if (tri[u] > tri[v]) std::swap(u, v);
            const std::array<std::size_t, 2> key{tri[u], tri[v]};
            le[cnt++] = {u, v, edge_id.at(key)};
        }
        auto lam = [&](int p, int q) { return area / 12.0 * (p == q ? 2.0 : 1.0); };
        for (int e1 = 0; e1 < 3; ++e1)
            for (int e2 = 0; e2 < 3; ++e2) {
                const int a = le[e1].la, b = le[e1].lb, c = le[e2].la, d = le[e2].lb;
                const double v = lam(a, c) * g[b][d] - lam(a, d) * g[b][c] -
                                 lam(b, c) * g[a][d] + lam(b, d) * g[a][c];
                t_m1.push_back({double(le[e1].gid), double(le[e2].gid), v});
            }
    }

    for (std::size_t e = 0; e < ne; ++e) {
        t_d0.push_back({double(e), double(edges[e][0]), -1.0});
        t_d0.push_back({double(e), double(edges[e][1]), 1.0});
    }

    FineOperators ops;
    ops.n_nodes = n;
    ops.n_edges = ne;
    ops.edge_list = std::move(edges);
    ops.m0 = SparseMatrix::from_triplets(n, n, std::move(t_m0));
    ops.m1 = SparseMatrix::from_triplets(ne, ne, std::move(t_m1));
    ops.k = SparseMatrix::from_triplets(n, n, std::move(t_k));
    ops.d0 = SparseMatrix::from_triplets(ne, n, std::move(t_d0));
    return ops;
}

double stiffness_identity_check(const FineOperators& ops) {
    const DenseMatrix d0 = ops.d0.to_dense();
    const DenseMatrix m1d0 = ops.m1.multiply_dense(d0);
    const DenseMatrix k2 = linalg::matmul(linalg::transpose(d0), m1d0);
    const DenseMatrix k1 = ops.k.to_dense();
    return linalg::max_abs(linalg::sub(k2, k1));
}

}  // namespace geonew::feec
