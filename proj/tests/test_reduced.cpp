#include <doctest.h>

#include <cmath>
#include <random>

#include "geonew/feec.hpp"
#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"
#include "geonew/nn.hpp"
#include "geonew/reduced.hpp"

using namespace geonew;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using linalg::DenseMatrix;

namespace {

mesh::Mesh test_annulus(int n_sides = 4) {
    mesh::GeometrySpec s;
    s.n_sides = n_sides;
    s.poly_radius = 0.4;
    s.radial_layers = 3;
    s.angular_resolution = 12;
    return mesh::generate_annulus_polygon(s);
}

// random column-stochastic nonnegative partition matrix
DenseMatrix random_stochastic(std::size_t p, std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(0.01, 1.0);
    DenseMatrix w(p, n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            w(i, j) = d(rng);
            s += w(i, j);
        }
        for (std::size_t i = 0; i < p; ++i) w(i, j) /= s;
    }
    return w;
}

reduced::PartitionMatrix poisson_partition(const mesh::Mesh& m, std::size_t p_free,
                                           std::mt19937_64& rng) {
    // softmax-like random free partitions masked off the boundary, plus the
    // boundary construction for inner = 1, outer = 0
    const std::size_t n = m.n_nodes();
    std::vector<double> inner_ub(m.sidesets.at("inner").nodes.size(), 1.0);
    std::vector<double> outer_ub(m.sidesets.at("outer").nodes.size(), 0.0);
    auto inner_parts = reduced::dirichlet_partitions(m, "inner", inner_ub);
    auto outer_parts = reduced::dirichlet_partitions(m, "outer", outer_ub);
    reduced::PartitionMatrix pm;
    pm.p_free = p_free;
    for (auto& bp : inner_parts) pm.boundary.push_back(bp);
    for (auto& bp : outer_parts) pm.boundary.push_back(bp);
    const std::size_t p_total = p_free + pm.boundary.size();
    pm.w = DenseMatrix(p_total, n);
    auto mask = m.boundary_mask();
    std::uniform_real_distribution<double> d(0.01, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) {
            double s = 0.0;
            for (std::size_t i = 0; i < p_free; ++i) {
                pm.w(i, j) = d(rng);
                s += pm.w(i, j);
            }
            for (std::size_t i = 0; i < p_free; ++i) pm.w(i, j) /= s;
        }
    }
    for (std::size_t b = 0; b < pm.boundary.size(); ++b)
        for (std::size_t j = 0; j < n; ++j) pm.w(p_free + b, j) = pm.boundary[b].row[j];
    return pm;
}

}  // namespace

TEST_CASE("dirichlet_partitions: constant data") {
    auto m = test_annulus();
    const std::size_t cnt = m.sidesets.at("inner").nodes.size();
    std::vector<double> ub(cnt, 1.0);
    auto parts = reduced::dirichlet_partitions(m, "inner", ub);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].coeff == doctest::Approx(double(cnt)));
    CHECK(parts[1].coeff == 0.0);
    for (std::size_t node : m.sidesets.at("inner").nodes) {
        CHECK(parts[0].row[node] == doctest::Approx(1.0 / double(cnt)));
        // reconstruction s * psi = u_b
        CHECK(parts[0].coeff * parts[0].row[node] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(parts[0].row[node] + parts[1].row[node] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("dirichlet_partitions: homogeneous data gives zero coefficients") {
    auto m = test_annulus();
    std::vector<double> ub(m.sidesets.at("outer").nodes.size(), 0.0);
    auto parts = reduced::dirichlet_partitions(m, "outer", ub);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].coeff == 0.0);
    CHECK(parts[1].coeff == 0.0);
    for (std::size_t node : m.sidesets.at("outer").nodes) {
        double recon = 0.0;
        for (const auto& bp : parts) recon += bp.coeff * bp.row[node];
        CHECK(recon == 0.0);
        CHECK(parts[0].row[node] + parts[1].row[node] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("dirichlet_partitions: arbitrary positive data reconstructs exactly") {
    auto m = test_annulus();
    const auto& nodes = m.sidesets.at("inner").nodes;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0.1, 3.0);
    std::vector<double> ub(nodes.size());
    for (auto& v : ub) v = d(rng);
    auto parts = reduced::dirichlet_partitions(m, "inner", ub);
    REQUIRE(parts.size() == 2);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double recon = 0.0;
        for (const auto& bp : parts) recon += bp.coeff * bp.row[nodes[i]];
        CHECK(std::abs(recon - ub[i]) <= 1e-14 * std::abs(ub[i]));
    }
}

TEST_CASE("dirichlet_partitions: mixed-sign data splits with exact reconstruction") {
    auto m = test_annulus();
    const auto& nodes = m.sidesets.at("inner").nodes;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0.0, 2.0);
    std::vector<double> ub(nodes.size());
    for (auto& v : ub) v = d(rng);
    auto parts = reduced::dirichlet_partitions(m, "inner", ub);
    REQUIRE(parts.size() == 3);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double recon = 0.0, colsum = 0.0;
        for (const auto& bp : parts) {
            CHECK(bp.row[nodes[i]] >= -1e-15);
            recon += bp.coeff * bp.row[nodes[i]];
            colsum += bp.row[nodes[i]];
        }
        CHECK(std::abs(recon - ub[i]) <= 1e-13 * std::max(1.0, std::abs(ub[i])));
        CHECK(colsum == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("project_operators: identity partition reproduces fine operators") {
    auto m = test_annulus(3);
    auto fine = feec::assemble(m);
    const std::size_t n = fine.n_nodes;
    reduced::PartitionMatrix pm;
    pm.w = DenseMatrix::identity(n);
    pm.p_free = n;
    auto rs = reduced::project_operators(fine, pm);
    CHECK(linalg::max_abs(linalg::sub(rs.m0, fine.m0.to_dense())) <= 1e-12);
    // m1 restricted to mesh-edge pairs equals fine m1; other rows vanish
    std::map<std::array<std::size_t, 2>, std::size_t> pair_index;
    for (std::size_t e = 0; e < rs.edges.size(); ++e) pair_index[rs.edges[e]] = e;
    DenseMatrix m1f = fine.m1.to_dense();
    for (std::size_t e1 = 0; e1 < fine.edge_list.size(); ++e1)
        for (std::size_t e2 = 0; e2 < fine.edge_list.size(); ++e2) {
            const std::size_t r1 = pair_index.at(fine.edge_list[e1]);
            const std::size_t r2 = pair_index.at(fine.edge_list[e2]);
            CHECK(rs.m1(r1, r2) == doctest::Approx(m1f(e1, e2)).epsilon(1e-12));
        }
    // reduced stiffness equals the fine stiffness
    CHECK(linalg::max_abs(linalg::sub(rs.k, fine.k.to_dense())) <= 1e-10);
}

TEST_CASE("project_operators: total mass preserved for random stochastic W") {
    auto m = test_annulus(5);
    auto fine = feec::assemble(m);
    std::mt19937_64 rng(7);
    double area = 0.0;
    for (std::size_t t = 0; t < m.triangles.size(); ++t) area += mesh::triangle_area(m, t);
    for (int trial = 0; trial < 3; ++trial) {
        reduced::PartitionMatrix pm;
        pm.p_free = 6;
        pm.w = random_stochastic(6, fine.n_nodes, rng);
        auto rs = reduced::project_operators(fine, pm);
        double mass = 0.0;
        for (double v : rs.m0.a) mass += v;
        CHECK(mass == doctest::Approx(area).epsilon(1e-12));
    }
}

TEST_CASE("projection identity d0' W^T = W1^T d0 for random stochastic W") {
    for (int n_sides : {3, 6}) {
        auto m = test_annulus(n_sides);
        auto fine = feec::assemble(m);
        std::mt19937_64 rng(11 + n_sides);
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t p = 4 + std::size_t(trial);
            reduced::PartitionMatrix pm;
            pm.p_free = p;
            pm.w = random_stochastic(p, fine.n_nodes, rng);
            auto rs = reduced::project_operators(fine, pm);
            // rebuild W1 to check the identity
            Tape t;
            Var wv = t.constant(Tensor::from_dense(pm.w));
            auto edges_ptr =
                std::make_shared<const std::vector<std::array<std::size_t, 2>>>(rs.edges);
            auto proj = reduced::project_on_tape(t, wv, fine, rs.d0, edges_ptr);
            DenseMatrix w1 = t.val(proj.w1).to_dense();
            DenseMatrix lhs = fine.d0.multiply_dense(linalg::transpose(pm.w));
            DenseMatrix rhs = linalg::matmul(linalg::transpose(w1), rs.d0);
            CHECK(linalg::max_abs(linalg::sub(lhs, rhs)) <= 1e-10);
        }
    }
}

TEST_CASE("reduced k: equals d0^T m1 d0, annihilates constants, free block SPD") {
    auto m = test_annulus(4);
    auto fine = feec::assemble(m);
    std::mt19937_64 rng(13);
    auto pm = poisson_partition(m, 6, rng);
    // partition of unity: column sums 1
    for (std::size_t j = 0; j < pm.w.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < pm.w.rows; ++i) s += pm.w(i, j);
        CHECK(std::abs(1.0 - s) <= 1e-12);
    }
    auto rs = reduced::project_operators(fine, pm);
    // two association orders of d0^T m1 d0
    DenseMatrix k2 = linalg::matmul(linalg::matmul(linalg::transpose(rs.d0), rs.m1), rs.d0);
    CHECK(linalg::max_abs(linalg::sub(rs.k, k2)) <= 1e-10);
    // constants in the kernel
    std::vector<double> ones(rs.p_total, 1.0);
    auto k1 = linalg::matvec(rs.k, ones);
    for (double v : k1) CHECK(std::abs(v) <= 1e-10);
    // free-restricted k SPD with Dirichlet partitions present
    auto kf = rs.k_free();
    for (std::size_t i = 0; i < kf.rows; ++i)
        for (std::size_t j = i + 1; j < kf.cols; ++j)
            kf(i, j) = kf(j, i) = 0.5 * (kf(i, j) + kf(j, i));
    auto eig = linalg::sym_eig(kf);
    CHECK(eig.eigenvalues.front() > 0.0);
}

TEST_CASE("reconstruct_field: constants, one-hot rows, exact Dirichlet values") {
    auto m = test_annulus(4);
    auto fine = feec::assemble(m);
    std::mt19937_64 rng(17);
    auto pm = poisson_partition(m, 5, rng);
    const std::size_t p = pm.p_total();
    // constant coefficients across partitions reproduce the constant
    DenseMatrix uc(p, 1, 3.25);
    auto fc = reduced::reconstruct_field(uc, pm);
    for (double v : fc.a) CHECK(v == doctest::Approx(3.25).epsilon(1e-13));
    // one-hot coefficient selects the partition row
    DenseMatrix oh(p, 1);
    oh(2, 0) = 1.0;
    auto fo = reduced::reconstruct_field(oh, pm);
    for (std::size_t j = 0; j < pm.w.cols; ++j) CHECK(fo(j, 0) == pm.w(2, j));
    // fixed coefficients reproduce u_b exactly on Dirichlet nodes
    DenseMatrix u(p, 1);
    std::normal_distribution<double> d(0.0, 1.0);
    for (std::size_t i = 0; i < pm.p_free; ++i) u(i, 0) = d(rng);
    auto coeffs = pm.fixed_coeffs();
    for (std::size_t b = 0; b < coeffs.size(); ++b) u(pm.p_free + b, 0) = coeffs[b];
    auto f = reduced::reconstruct_field(u, pm);
    for (std::size_t node : m.sidesets.at("inner").nodes)
        CHECK(std::abs(f(node, 0) - 1.0) <= 1e-14);
    for (std::size_t node : m.sidesets.at("outer").nodes) CHECK(f(node, 0) == 0.0);
}

TEST_CASE("partition_forward: uniform softmax at zero logits, exact column sums") {
    auto m = test_annulus(4);
    const std::size_t n = m.n_nodes();
    const std::size_t p_free = 6;
    std::vector<double> inner_ub(m.sidesets.at("inner").nodes.size(), 1.0);
    std::vector<double> outer_ub(m.sidesets.at("outer").nodes.size(), 0.0);
    auto info = reduced::make_dirichlet_info(m, {{"inner", inner_ub}, {"outer", outer_ub}},
                                             p_free);
    nn::ParamBundle params;
    std::mt19937_64 rng(19);
    reduced::declare_partition_model(params, "w", 8, 2, 16, p_free, rng);
    // zero all parameters -> zero logits -> uniform softmax
    for (auto& v : params.values) std::fill(v.v.begin(), v.v.end(), 0.0);
    Tape t;
    auto pv = nn::bind(t, params);
    std::mt19937_64 frng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor z(n, 8), cw(2, 8);
    for (auto& x : z.v) x = nd(frng);
    for (auto& x : cw.v) x = nd(frng);
    Var w = reduced::partition_forward(t, t.input(z), t.input(cw), pv, "w", p_free, info);
    const Tensor& wv = t.val(w);
    REQUIRE(wv.rows == p_free + info.n_fixed);
    auto mask = m.boundary_mask();
    for (std::size_t j = 0; j < n; ++j) {
        double colsum = 0.0;
        for (std::size_t i = 0; i < wv.rows; ++i) colsum += wv(i, j);
        CHECK(std::abs(1.0 - colsum) <= 1e-12);
        if (!mask[j])
            for (std::size_t i = 0; i < p_free; ++i)
                CHECK(wv(i, j) == doctest::Approx(1.0 / double(p_free)).epsilon(1e-12));
        else
            for (std::size_t i = 0; i < p_free; ++i) CHECK(wv(i, j) == 0.0);
    }
}

TEST_CASE("partition_forward: gradient of a scalar of W matches finite differences") {
    auto m = test_annulus(3);
    const std::size_t n = m.n_nodes();
    const std::size_t p_free = 4;
    std::vector<double> inner_ub(m.sidesets.at("inner").nodes.size(), 1.0);
    auto info = reduced::make_dirichlet_info(m, {{"inner", inner_ub}}, p_free);
    nn::ParamBundle params;
    std::mt19937_64 rng(23);
    reduced::declare_partition_model(params, "w", 4, 1, 8, p_free, rng);
    std::mt19937_64 frng(2);
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor z(n, 4), cw(1, 4), weight(p_free + info.n_fixed, n);
    for (auto& x : z.v) x = nd(frng);
    for (auto& x : cw.v) x = nd(frng);
    for (auto& x : weight.v) x = nd(frng);
    auto objective = [&](const nn::ParamBundle& pb) {
        Tape t;
        auto pv = nn::bind(t, pb);
        Var w = reduced::partition_forward(t, t.input(z), t.input(cw), pv, "w", p_free, info);
        Var o = t.sum(t.mul(w, t.constant(weight)));
        return t.val(o).v[0];
    };
    Tape t;
    auto pv = nn::bind(t, params);
    Var w = reduced::partition_forward(t, t.input(z), t.input(cw), pv, "w", p_free, info);
    Var o = t.sum(t.mul(w, t.constant(weight)));
    t.backward(o);
    std::mt19937_64 pick(31);
    for (int c = 0; c < 20; ++c) {
        const std::size_t pi =
            std::uniform_int_distribution<std::size_t>(0, params.names.size() - 1)(pick);
        auto& tensor = params.at(params.names[pi]);
        const std::size_t k =
            std::uniform_int_distribution<std::size_t>(0, tensor.size() - 1)(pick);
        const double orig = tensor.v[k];
        const double h = 1e-6 * (1.0 + std::abs(orig));
        nn::ParamBundle pb = params;
        pb.at(params.names[pi]).v[k] = orig + h;
        const double fp = objective(pb);
        pb.at(params.names[pi]).v[k] = orig - h;
        const double fm = objective(pb);
        const double fd = (fp - fm) / (2.0 * h);
        const double gv = t.grad(pv[params.names[pi]]).v[k];
        CHECK(std::abs(gv - fd) <= 1e-5 * std::max({std::abs(fd), std::abs(gv), 1.0}));
    }
}

TEST_CASE("multi-field operators are block-diagonal across fields") {
    auto m = test_annulus(3);
    auto fine = feec::assemble(m);
    std::mt19937_64 rng(37);
    std::vector<DenseMatrix> ks;
    for (int f = 0; f < 2; ++f) {
        auto pm = poisson_partition(m, 4, rng);
        ks.push_back(reduced::project_operators(fine, pm).k);
    }
    auto kg = reduced::block_diag(ks);
    const std::size_t p = ks[0].rows;
    REQUIRE(kg.rows == 2 * p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            CHECK(kg(i, p + j) == 0.0);
            CHECK(kg(p + i, j) == 0.0);
            CHECK(kg(i, j) == ks[0](i, j));
            CHECK(kg(p + i, p + j) == ks[1](i, j));
        }
}
