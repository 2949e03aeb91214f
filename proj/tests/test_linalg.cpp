#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "geonew/linalg.hpp"

using namespace geonew::linalg;

namespace {

DenseMatrix random_symmetric(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    DenseMatrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = d(rng);
    return a;
}

DenseMatrix random_spd(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    DenseMatrix b(n, n);
    for (auto& v : b.a) v = d(rng);
    DenseMatrix a = matmul(transpose(b), b);
    for (std::size_t i = 0; i < n; ++i) a(i, i) += double(n);
    return a;
}

}  // namespace

TEST_CASE("sym_eig: identity and diagonal") {
    DenseMatrix i2 = DenseMatrix::identity(2);
    auto r = sym_eig(i2);
    CHECK(r.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));

    DenseMatrix d(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 5.0;
    auto rd = sym_eig(d);
    CHECK(rd.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(rd.eigenvalues[1] == doctest::Approx(5.0).epsilon(1e-14));
    // eigenvectors are a permutation of identity columns
    for (std::size_t j = 0; j < 2; ++j) {
        double mx = 0.0;
        for (std::size_t i = 0; i < 2; ++i) mx = std::max(mx, std::abs(rd.eigenvectors(i, j)));
        CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("sym_eig: 2x2 characteristic polynomial roots") {
    // [[2,1],[1,2]]: det(A - t I) = (2-t)^2 - 1, roots t = 1, 3
    DenseMatrix a(2, 2);
    a(0, 0) = 2;
    a(0, 1) = 1;
    a(1, 0) = 1;
    a(1, 1) = 2;
    auto r = sym_eig(a);
    CHECK(r.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("sym_eig: residual, orthonormality, reconstruction") {
    std::mt19937_64 rng(7);
    for (std::size_t n : {3, 8, 17, 32, 64}) {
        DenseMatrix a = random_symmetric(n, rng);
        auto r = sym_eig(a);
        const double na = fro_norm(a);
        // A V = V diag(lambda)
        DenseMatrix av = matmul(a, r.eigenvectors);
        DenseMatrix vl = r.eigenvectors;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) vl(i, j) *= r.eigenvalues[j];
        CHECK(max_abs(sub(av, vl)) <= 1e-10 * std::max(na, 1.0));
        // V^T V = I
        DenseMatrix vtv = matmul(transpose(r.eigenvectors), r.eigenvectors);
        CHECK(max_abs(sub(vtv, DenseMatrix::identity(n))) <= 1e-10);
        // reconstruction ||A - V L V^T||_F <= 1e-9 ||A||_F
        DenseMatrix rec = matmul(vl, transpose(r.eigenvectors));
        CHECK(fro_norm(sub(a, rec)) <= 1e-9 * na);
        // ascending order
        for (std::size_t j = 1; j < n; ++j) CHECK(r.eigenvalues[j] >= r.eigenvalues[j - 1]);
    }
}

TEST_CASE("sym_eig: rejects non-symmetric input") {
    DenseMatrix a(2, 2);
    a(0, 1) = 1.0;
    CHECK_THROWS_AS(sym_eig(a), std::invalid_argument);
}

TEST_CASE("generalized_sym_eig: identity mass reduces to sym_eig") {
    std::mt19937_64 rng(3);
    DenseMatrix k = random_symmetric(10, rng);
    auto g = generalized_sym_eig(k, DenseMatrix::identity(10));
    auto s = sym_eig(k);
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(g.eigenvalues[i] == doctest::Approx(s.eigenvalues[i]).epsilon(1e-10));
}

TEST_CASE("generalized_sym_eig: k = m gives all unit eigenvalues") {
    std::mt19937_64 rng(4);
    DenseMatrix m = random_spd(9, rng);
    auto g = generalized_sym_eig(m, m);
    for (double l : g.eigenvalues) CHECK(l == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("generalized_sym_eig: path-graph Laplacian closed-form spectrum") {
    // K = tridiag(-1, 2, -1) on the n-1 interior nodes of a path with n
    // elements, M = h I. Eigenvalues: 2 (1 - cos(k pi / n)) / h.
    const std::size_t n = 12;
    const double h = 0.37;
    DenseMatrix k(n - 1, n - 1), m(n - 1, n - 1);
    for (std::size_t i = 0; i < n - 1; ++i) {
        k(i, i) = 2.0;
        if (i + 1 < n - 1) {
            k(i, i + 1) = -1.0;
            k(i + 1, i) = -1.0;
        }
        m(i, i) = h;
    }
    auto g = generalized_sym_eig(k, m);
    for (std::size_t j = 0; j < n - 1; ++j) {
        const double expected = 2.0 * (1.0 - std::cos((j + 1) * M_PI / n)) / h;
        CHECK(g.eigenvalues[j] == doctest::Approx(expected).epsilon(1e-10));
    }
    // K phi = lambda M phi residual and M-orthonormality
    DenseMatrix kv = matmul(k, g.eigenvectors);
    DenseMatrix mv = matmul(m, g.eigenvectors);
    for (std::size_t j = 0; j < n - 1; ++j)
        for (std::size_t i = 0; i < n - 1; ++i)
            CHECK(std::abs(kv(i, j) - g.eigenvalues[j] * mv(i, j)) <= 1e-9);
    DenseMatrix vmv = matmul(transpose(g.eigenvectors), mv);
    CHECK(max_abs(sub(vmv, DenseMatrix::identity(n - 1))) <= 1e-9);
}

TEST_CASE("generalized_sym_eig: rejects non-SPD mass") {
    DenseMatrix k = DenseMatrix::identity(3);
    DenseMatrix m = DenseMatrix::identity(3);
    m(2, 2) = -1.0;
    CHECK_THROWS_AS(generalized_sym_eig(k, m), std::runtime_error);
}

TEST_CASE("solve_spd: identity, diagonal, random SPD residual") {
    std::vector<double> b{1.5, -2.0, 0.25};
    auto x = solve_spd(DenseMatrix::identity(3), b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(x[i] == b[i]);

    DenseMatrix d(2, 2);
    d(0, 0) = 4;
    d(1, 1) = 9;
    auto xd = solve_spd(d, std::vector<double>{8, 27});
    CHECK(xd[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(xd[1] == doctest::Approx(3.0).epsilon(1e-15));

    std::mt19937_64 rng(11);
    DenseMatrix a = random_spd(10, rng);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> rb(10);
    for (auto& v : rb) v = dist(rng);
    auto xr = solve_spd(a, rb);
    auto ax = matvec(a, xr);
    double rnorm = 0.0;
    for (std::size_t i = 0; i < 10; ++i) rnorm += (ax[i] - rb[i]) * (ax[i] - rb[i]);
    CHECK(std::sqrt(rnorm) <= 1e-10 * norm2(rb));
}

TEST_CASE("solve_spd: deterministic (bit-identical repeat)") {
    std::mt19937_64 rng(13);
    DenseMatrix a = random_spd(12, rng);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> b(12);
    for (auto& v : b) v = dist(rng);
    auto x1 = solve_spd(a, b);
    auto x2 = solve_spd(a, b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(x1[i] == x2[i]);
}

TEST_CASE("solve_spd: rejects non-SPD") {
    DenseMatrix a = DenseMatrix::identity(2);
    a(1, 1) = -3.0;
    CHECK_THROWS_AS(solve_spd(a, std::vector<double>{1, 1}), std::runtime_error);
}

TEST_CASE("op_norm_2: identity, diagonal, sym_eig oracle, zero") {
    CHECK(op_norm_2(DenseMatrix::identity(5)) == doctest::Approx(1.0).epsilon(1e-7));
    DenseMatrix d(2, 2);
    d(0, 0) = 2;
    d(1, 1) = 5;
    CHECK(op_norm_2(d) == doctest::Approx(5.0).epsilon(1e-7));

    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseMatrix a(8, 8);
    for (auto& v : a.a) v = dist(rng);
    // oracle: largest eigenvalue of A^T A via sym_eig
    DenseMatrix ata = matmul(transpose(a), a);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = i + 1; j < 8; ++j) {
            double v = 0.5 * (ata(i, j) + ata(j, i));
            ata(i, j) = ata(j, i) = v;
        }
    auto eig = sym_eig(ata);
    const double expected = std::sqrt(eig.eigenvalues.back());
    CHECK(op_norm_2(a) == doctest::Approx(expected).epsilon(1e-6));

    CHECK(op_norm_2(DenseMatrix(4, 4)) == 0.0);
}

TEST_CASE("op_norm_2: upper-bounds ||Ax||/||x|| for random unit x") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseMatrix a(7, 5);
    for (auto& v : a.a) v = dist(rng);
    const double nrm = op_norm_2(a);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> x(5);
        for (auto& v : x) v = dist(rng);
        const double nx = norm2(x);
        auto ax = matvec(a, x);
        CHECK(norm2(ax) / nx <= nrm * (1.0 + 1e-6));
    }
}

TEST_CASE("lu: solves general and transposed systems") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseMatrix a(6, 6);
    for (auto& v : a.a) v = dist(rng);
    std::vector<double> b(6);
    for (auto& v : b) v = dist(rng);
    auto f = lu_factor(a);
    auto x = f.solve(b);
    auto ax = matvec(a, x);
    for (std::size_t i = 0; i < 6; ++i) CHECK(ax[i] == doctest::Approx(b[i]).epsilon(1e-9));
    auto xt = f.solve_transposed(b);
    auto atx = matvec(transpose(a), xt);
    for (std::size_t i = 0; i < 6; ++i) CHECK(atx[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("sparse: triplet assembly merges duplicates, spmv matches dense") {
    std::vector<std::array<double, 3>> trip{{0, 1, 2.0}, {0, 1, 3.0}, {1, 0, -1.0}, {2, 2, 4.0}};
    auto s = SparseMatrix::from_triplets(3, 3, trip);
    auto d = s.to_dense();
    CHECK(d(0, 1) == 5.0);
    CHECK(d(1, 0) == -1.0);
    CHECK(d(2, 2) == 4.0);
    std::vector<double> x{1, 2, 3};
    auto y = s.multiply(x);
    auto yd = matvec(d, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == yd[i]);
    // column indices sorted per row
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t k = s.row_ptr[i] + 1; k < s.row_ptr[i + 1]; ++k)
            CHECK(s.col_idx[k - 1] < s.col_idx[k]);
}
