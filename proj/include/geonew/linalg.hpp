#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace geonew::linalg {

/// Row-major dense matrix of doubles. Vectors are n x 1 (or 1 x n) matrices.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix from_column(const std::vector<double>& v);
};

/// Compressed-row sparse matrix. Column indices sorted within each row.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr;  // rows + 1 offsets
    std::vector<std::size_t> col_idx;
    std::vector<double> vals;

    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                      std::vector<std::array<double, 3>> trip);

    std::vector<double> multiply(const std::vector<double>& x) const;
    DenseMatrix multiply_dense(const DenseMatrix& b) const;            // this * B
    DenseMatrix transpose_multiply_dense(const DenseMatrix& b) const;  // this^T * B
    DenseMatrix to_dense() const;
    SparseMatrix transposed() const;
    double symmetry_gap() const;  // max |a_ij - a_ji|
};

struct EigResult {
    std::vector<double> eigenvalues;  // ascending
    DenseMatrix eigenvectors;         // columns, orthonormal (M-orthonormal for generalized)
};

/// Symmetric eigensolve via Householder tridiagonalization + implicit-shift QL.
/// Throws std::invalid_argument on non-symmetric input,
/// std::runtime_error on non-convergence.
EigResult sym_eig(const DenseMatrix& a);

/// K phi = lambda M phi with M SPD, reduced through Cholesky M = L L^T.
EigResult generalized_sym_eig(const DenseMatrix& k, const DenseMatrix& m);

struct CholeskyFactor {
    DenseMatrix l;  // lower triangular
    std::vector<double> solve(const std::vector<double>& b) const;
    DenseMatrix solve(const DenseMatrix& b) const;
    std::vector<double> forward(const std::vector<double>& b) const;   // L y = b
    std::vector<double> backward(const std::vector<double>& b) const;  // L^T x = b
};

/// Throws std::runtime_error if a is not SPD.
CholeskyFactor cholesky(const DenseMatrix& a);

std::vector<double> solve_spd(const DenseMatrix& a, const std::vector<double>& b);
DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b);

/// Dense LU with partial pivoting, for the (generally nonsymmetric) Newton
/// and adjoint systems.
struct LuFactor {
    DenseMatrix lu;
    std::vector<std::size_t> perm;
    std::vector<double> solve(const std::vector<double>& b) const;
    std::vector<double> solve_transposed(const std::vector<double>& b) const;
};
LuFactor lu_factor(DenseMatrix a);  // throws std::runtime_error if singular

/// Largest singular value by power iteration on A^T A with a fixed-seed
/// start vector; relative change tolerance 1e-8. Zero matrix -> 0.
double op_norm_2(const DenseMatrix& a);

// Small dense helpers.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b);
std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x);
double max_abs(const DenseMatrix& a);
double fro_norm(const DenseMatrix& a);
double norm2(const std::vector<double>& v);
DenseMatrix submatrix(const DenseMatrix& a, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols);

}  // namespace geonew::linalg
