#include "geonew/reduced.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace geonew::reduced {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using linalg::DenseMatrix;

std::vector<BoundaryPartition> dirichlet_partitions(const mesh::Mesh& m,
                                                    const std::string& sideset,
                                                    const std::vector<double>& u_b) {
    const auto& ss = m.sidesets.at(sideset);
    if (u_b.size() != ss.nodes.size())
        throw std::invalid_argument("dirichlet_partitions: data length != sideset size");
    if (ss.nodes.empty()) throw std::invalid_argument("dirichlet_partitions: empty sideset");
    const std::size_t n = m.n_nodes();
    double s_pos = 0.0, s_neg = 0.0;
    for (double v : u_b) {
        if (!std::isfinite(v)) throw std::invalid_argument("dirichlet_partitions: non-finite data");
        if (v > 0.0) s_pos += v;
        if (v < 0.0) s_neg -= v;
    }
    std::vector<BoundaryPartition> out;
    auto make_row = [&](auto&& f) {
        std::vector<double> row(n, 0.0);
        for (std::size_t i = 0; i < ss.nodes.size(); ++i) row[ss.nodes[i]] = f(u_b[i]);
        return row;
    };
    if (s_pos == 0.0 && s_neg == 0.0) {
        // homogeneous data: uniform zero-coefficient pair, u = 0 exactly
        const double uni = 1.0 / double(ss.nodes.size());
        out.push_back({sideset, make_row([&](double) { return uni; }), 0.0});
        out.push_back({sideset, make_row([&](double) { return 1.0 - uni; }), 0.0});
        return out;
    }
    if (s_pos > 0.0)
        out.push_back({sideset, make_row([&](double v) { return v > 0.0 ? v / s_pos : 0.0; }),
                       s_pos});
    if (s_neg > 0.0)
        out.push_back({sideset, make_row([&](double v) { return v < 0.0 ? -v / s_neg : 0.0; }),
                       -s_neg});
    // complement keeps the column sums at 1; supports are disjoint so it stays >= 0
    std::vector<double> rest(n, 0.0);
    for (std::size_t i = 0; i < ss.nodes.size(); ++i) {
        double taken = 0.0;
        for (const auto& bp : out) taken += bp.row[ss.nodes[i]];
        rest[ss.nodes[i]] = 1.0 - taken;
    }
    out.push_back({sideset, std::move(rest), 0.0});
    return out;
}

std::vector<std::size_t> PartitionMatrix::free_indices() const {
    std::vector<std::size_t> idx(p_free);
    for (std::size_t i = 0; i < p_free; ++i) idx[i] = i;
    return idx;
}

std::vector<double> PartitionMatrix::fixed_coeffs() const {
    std::vector<double> c;
    c.reserve(boundary.size());
    for (const auto& b : boundary) c.push_back(b.coeff);
    return c;
}

std::vector<std::array<std::size_t, 2>> complete_graph_edges(std::size_t p) {
    std::vector<std::array<std::size_t, 2>> e;
    e.reserve(p * (p - 1) / 2);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) e.push_back({i, j});
    return e;
}

DenseMatrix reduced_incidence(std::size_t p) {
    auto edges = complete_graph_edges(p);
    DenseMatrix d0(edges.size(), p);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        d0(e, edges[e][0]) = -1.0;
        d0(e, edges[e][1]) = 1.0;
    }
    return d0;
}

DenseMatrix ReducedSystem::k_free() const { return linalg::submatrix(k, free_idx, free_idx); }

ReducedSystem project_operators(const feec::FineOperators& fine, const PartitionMatrix& pm) {
    if (pm.w.cols != fine.n_nodes)
        throw std::invalid_argument("project_operators: partition/operator size mismatch");
    ReducedSystem rs;
    rs.p_total = pm.p_total();
    rs.edges = complete_graph_edges(rs.p_total);
    rs.p1 = rs.edges.size();
    rs.d0 = reduced_incidence(rs.p_total);
    rs.free_idx = pm.free_indices();
    rs.fixed_coeffs = pm.fixed_coeffs();

    Tape t;
    Var w = t.constant(Tensor::from_dense(pm.w));
    auto edges_ptr =
        std::make_shared<const std::vector<std::array<std::size_t, 2>>>(rs.edges);
    auto pv = project_on_tape(t, w, fine, rs.d0, edges_ptr, /*with_m0=*/true);
    rs.m0 = t.val(pv.m0).to_dense();
    rs.m1 = t.val(pv.m1).to_dense();
    rs.k = t.val(pv.k).to_dense();
    return rs;
}

DenseMatrix reconstruct_field(const DenseMatrix& u_reduced, const PartitionMatrix& pm) {
    if (u_reduced.rows != pm.p_total())
        throw std::invalid_argument("reconstruct_field: coefficient count mismatch");
    return linalg::matmul(linalg::transpose(pm.w), u_reduced);
}

DenseMatrix block_diag(const std::vector<DenseMatrix>& blocks) {
    std::size_t r = 0, c = 0;
    for (const auto& b : blocks) {
        r += b.rows;
        c += b.cols;
    }
    DenseMatrix out(r, c);
    std::size_t r0 = 0, c0 = 0;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = 0; j < b.cols; ++j) out(r0 + i, c0 + j) = b(i, j);
        r0 += b.rows;
        c0 += b.cols;
    }
    return out;
}

DirichletInfo make_dirichlet_info(
    const mesh::Mesh& m,
    const std::vector<std::pair<std::string, std::vector<double>>>& dirichlet_data,
    std::size_t p_free) {
    DirichletInfo info;
    std::set<std::size_t> dirichlet_nodes;
    for (const auto& [name, ub] : dirichlet_data) {
        auto parts = dirichlet_partitions(m, name, ub);
        for (auto& bp : parts) {
            info.fixed_coeffs.push_back(bp.coeff);
            info.partitions.push_back(std::move(bp));
        }
        for (std::size_t node : m.sidesets.at(name).nodes) dirichlet_nodes.insert(node);
    }
    info.n_fixed = info.partitions.size();
    const std::size_t n = m.n_nodes();
    info.boundary_block = Tensor(info.n_fixed, n);
    for (std::size_t r = 0; r < info.n_fixed; ++r)
        for (std::size_t c = 0; c < n; ++c)
            info.boundary_block(r, c) = info.partitions[r].row[c];
    info.interior_mask = Tensor(n, p_free, 1.0);
    for (std::size_t node : dirichlet_nodes)
        for (std::size_t j = 0; j < p_free; ++j) info.interior_mask(node, j) = 0.0;
    return info;
}

void declare_partition_model(nn::ParamBundle& p, const std::string& prefix, std::size_t d_model,
                             std::size_t n_context, std::size_t hidden, std::size_t p_free,
                             std::mt19937_64& rng) {
    const std::size_t d_in = d_model * (1 + n_context);
    nn::declare_mlp(p, prefix + ".mlp", {d_in, hidden, hidden, p_free}, rng);
    p.add(prefix + ".skip.w", nn::xavier_uniform(p_free, d_in, rng));
    p.add(prefix + ".alpha", Tensor::scalar(1.0));
}

Var partition_forward(Tape& t, Var z, Var c_w, const nn::ParamVars& p, const std::string& prefix,
                      std::size_t p_free, const DirichletInfo& info) {
    const std::size_t n = z.rows;
    Var ctx = t.broadcast_row(t.reshape(c_w, 1, c_w.rows * c_w.cols), n);
    Var x = t.concat_cols(z, ctx);
    Var logits = nn::mlp_forward(t, p, prefix + ".mlp", x, 3);
    Var skip = t.matmul(x, t.transpose(p[prefix + ".skip.w"]));
    logits = t.add(logits, t.scale(skip, p[prefix + ".alpha"]));
    Var soft = t.softmax_rows(logits);  // per node across the free partitions
    Var masked = t.mul(soft, t.constant(info.interior_mask));
    Var w_free = t.transpose(masked);  // p_free x N
    if (info.n_fixed == 0) return w_free;
    return t.concat_rows(w_free, t.constant(info.boundary_block));
}

ProjectedVars project_on_tape(Tape& t, Var w, const feec::FineOperators& fine,
                              const DenseMatrix& d0_reduced,
                              std::shared_ptr<const std::vector<std::array<std::size_t, 2>>>
                                  reduced_edges,
                              bool with_m0) {
    ProjectedVars out;
    auto fine_edges =
        std::make_shared<const std::vector<std::array<std::size_t, 2>>>(fine.edge_list);
    out.w1 = t.edge_antisym_product(w, fine_edges, reduced_edges);
    Var x = t.spmatmul_sym(&fine.m1, t.transpose(out.w1));  // E x P1
    out.m1 = t.matmul(out.w1, x);
    Var d0c = t.constant(Tensor::from_dense(d0_reduced));
    out.k = t.matmul(t.transpose(d0c), t.matmul(out.m1, d0c));
    if (with_m0) {
        Var y = t.spmatmul_sym(&fine.m0, t.transpose(w));  // N x P
        out.m0 = t.matmul(w, y);
        out.has_m0 = true;
    }
    return out;
}

}  // namespace geonew::reduced
