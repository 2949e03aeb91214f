#include "geonew/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace geonew::linalg {

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::from_column(const std::vector<double>& v) {
    DenseMatrix m(v.size(), 1);
    m.a = v;
    return m;
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<std::array<double, 3>> trip) {
    for (const auto& t : trip) {
        if (t[0] < 0 || t[0] >= double(rows) || t[1] < 0 || t[1] >= double(cols))
            throw std::invalid_argument("sparse triplet index out of range");
    }
    std::sort(trip.begin(), trip.end(), [](const auto& x, const auto& y) {
        if (x[0] != y[0]) return x[0] < y[0];
        return x[1] < y[1];
    });
    SparseMatrix s;
    s.rows = rows;
    s.cols = cols;
    s.row_ptr.assign(rows + 1, 0);
    for (std::size_t t = 0; t < trip.size();) {
        std::size_t u = t;
        double sum = 0.0;
        while (u < trip.size() && trip[u][0] == trip[t][0] && trip[u][1] == trip[t][1]) {
            sum += trip[u][2];
            ++u;
        }
        s.col_idx.push_back(std::size_t(trip[t][1]));
        s.vals.push_back(sum);
        s.row_ptr[std::size_t(trip[t][0]) + 1]++;
        t = u;
    }
    for (std::size_t i = 0; i < rows; ++i) s.row_ptr[i + 1] += s.row_ptr[i];
    return s;
}

std::vector<double> SparseMatrix::multiply(const std::vector<double>& x) const {
    if (x.size() != cols) throw std::invalid_argument("spmv size mismatch");
    std::vector<double> y(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) sum += vals[k] * x[col_idx[k]];
        y[i] = sum;
    }
    return y;
}

DenseMatrix SparseMatrix::multiply_dense(const DenseMatrix& b) const {
    if (b.rows != cols) throw std::invalid_argument("spmm size mismatch");
    DenseMatrix y(rows, b.cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
            const double v = vals[k];
            const double* brow = &b.a[col_idx[k] * b.cols];
            double* yrow = &y.a[i * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) yrow[j] += v * brow[j];
        }
    }
    return y;
}

DenseMatrix SparseMatrix::transpose_multiply_dense(const DenseMatrix& b) const {
    if (b.rows != rows) throw std::invalid_argument("spmm^T size mismatch");
    DenseMatrix y(cols, b.cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* brow = &b.a[i * b.cols];
        for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
            const double v = vals[k];
            double* yrow = &y.a[col_idx[k] * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) yrow[j] += v * brow[j];
        }
    }
    return y;
}

DenseMatrix SparseMatrix::to_dense() const {
    DenseMatrix d(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d(i, col_idx[k]) = vals[k];
    return d;
}

SparseMatrix SparseMatrix::transposed() const {
    std::vector<std::array<double, 3>> trip;
    trip.reserve(vals.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
            trip.push_back({double(col_idx[k]), double(i), vals[k]});
    return from_triplets(cols, rows, std::move(trip));
}

double SparseMatrix::symmetry_gap() const {
    DenseMatrix d = to_dense();
    double g = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) g = std::max(g, std::abs(d(i, j) - d(j, i)));
    return g;
}

namespace {

void require_square(const DenseMatrix& a, const char* what) {
    if (a.rows != a.cols) {
        std::ostringstream os;
        os << what << ": matrix not square (" << a.rows << "x" << a.cols << ")";
        throw std::invalid_argument(os.str());
    }
}

void require_symmetric(const DenseMatrix& a, const char* what) {
    require_square(a, what);
    double scale = max_abs(a);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = i + 1; j < a.cols; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-12 * std::max(scale, 1e-300)) {
                std::ostringstream os;
                os << what << ": matrix not symmetric, |a(" << i << "," << j << ") - a(" << j
                   << "," << i << ")| = " << std::abs(a(i, j) - a(j, i));
                throw std::invalid_argument(os.str());
            }
}

// Householder reduction of a real symmetric matrix to tridiagonal form,
// accumulating the orthogonal transform in z (classic tred2).
void tridiagonalize(DenseMatrix& z, std::vector<double>& d, std::vector<double>& e) {
    const std::size_t n = z.rows;
    d.assign(n, 0.0);
    e.assign(n, 0.0);
    for (std::size_t ii = n - 1; ii >= 1; --ii) {
        const std::size_t i = ii;
        const std::size_t l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (std::size_t k = 0; k <= l; ++k) scale += std::abs(z(i, k));
            if (scale == 0.0) {
                e[i] = z(i, l);
            } else {
                for (std::size_t k = 0; k <= l; ++k) {
                    z(i, k) /= scale;
                    h += z(i, k) * z(i, k);
                }
                double f = z(i, l);
                double g = (f >= 0.0 ? -std::sqrt(h) : std::sqrt(h));
                e[i] = scale * g;
                h -= f * g;
                z(i, l) = f - g;
                f = 0.0;
                for (std::size_t j = 0; j <= l; ++j) {
                    z(j, i) = z(i, j) / h;
                    g = 0.0;
                    for (std::size_t k = 0; k <= j; ++k) g += z(j, k) * z(i, k);
                    for (std::size_t k = j + 1; k <= l; ++k) g += z(k, j) * z(i, k);
                    e[j] = g / h;
                    f += e[j] * z(i, j);
                }
                const double hh = f / (h + h);
                for (std::size_t j = 0; j <= l; ++j) {
                    f = z(i, j);
                    e[j] = g = e[j] - hh * f;
                    for (std::size_t k = 0; k <= j; ++k)
                        z(j, k) -= f * e[k] + g * z(i, k);
                }
            }
        } else {
            e[i] = z(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] != 0.0) {
            for (std::size_t j = 0; j < i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k < i; ++k) g += z(i, k) * z(k, j);
                for (std::size_t k = 0; k < i; ++k) z(k, j) -= g * z(k, i);
            }
        }
        d[i] = z(i, i);
        z(i, i) = 1.0;
        for (std::size_t j = 0; j < i; ++j) z(j, i) = z(i, j) = 0.0;
    }
}

// QL with implicit shifts on a symmetric tridiagonal matrix (classic tql2);
// eigenvectors accumulated into z.
void tridiag_ql(std::vector<double>& d, std::vector<double>& e, DenseMatrix& z) {
    const std::size_t n = d.size();
    if (n == 0) return;
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        std::size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= 1e-300 || std::abs(e[m]) <= 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (++iter == 50) {
                    std::ostringstream os;
                    os << "sym_eig: QL failed to converge after 50 iterations (n=" << n
                       << ", residual=" << std::abs(e[l]) << ")";
                    throw std::runtime_error(os.str());
                }
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (std::size_t ii = m; ii-- > l;) {
                    const std::size_t i = ii;
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (std::size_t k = 0; k < n; ++k) {
                        f = z(k, i + 1);
                        z(k, i + 1) = s * z(k, i) + c * f;
                        z(k, i) = c * z(k, i) - s * f;
                    }
                }
                if (r == 0.0 && m > l + 1) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

}  // namespace

EigResult sym_eig(const DenseMatrix& a) {
    require_symmetric(a, "sym_eig");
    const std::size_t n = a.rows;
    EigResult res;
    res.eigenvectors = a;
    std::vector<double> d, e;
    tridiagonalize(res.eigenvectors, d, e);
    tridiag_ql(d, e, res.eigenvectors);
    // sort ascending, permuting eigenvector columns
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return d[i] < d[j]; });
    EigResult out;
    out.eigenvalues.resize(n);
    out.eigenvectors = DenseMatrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = d[order[j]];
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = res.eigenvectors(i, order[j]);
    }
    return out;
}

CholeskyFactor cholesky(const DenseMatrix& a) {
    require_square(a, "cholesky");
    const std::size_t n = a.rows;
    CholeskyFactor f;
    f.l = DenseMatrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= f.l(i, k) * f.l(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) {
                    std::ostringstream os;
                    os << "cholesky: matrix not SPD (pivot " << s << " at index " << i << ")";
                    throw std::runtime_error(os.str());
                }
                f.l(i, i) = std::sqrt(s);
            } else {
                f.l(i, j) = s / f.l(j, j);
            }
        }
    }
    return f;
}

std::vector<double> CholeskyFactor::forward(const std::vector<double>& b) const {
    const std::size_t n = l.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    return y;
}

std::vector<double> CholeskyFactor::backward(const std::vector<double>& b) const {
    const std::size_t n = l.rows;
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

std::vector<double> CholeskyFactor::solve(const std::vector<double>& b) const {
    return backward(forward(b));
}

DenseMatrix CholeskyFactor::solve(const DenseMatrix& b) const {
    DenseMatrix x(b.rows, b.cols);
    std::vector<double> col(b.rows);
    for (std::size_t j = 0; j < b.cols; ++j) {
        for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
        auto s = solve(col);
        for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = s[i];
    }
    return x;
}

std::vector<double> solve_spd(const DenseMatrix& a, const std::vector<double>& b) {
    if (a.rows != b.size()) throw std::invalid_argument("solve_spd size mismatch");
    return cholesky(a).solve(b);
}

DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) throw std::invalid_argument("solve_spd size mismatch");
    return cholesky(a).solve(b);
}

EigResult generalized_sym_eig(const DenseMatrix& k, const DenseMatrix& m) {
    require_symmetric(k, "generalized_sym_eig");
    if (m.rows != k.rows || m.cols != k.cols)
        throw std::invalid_argument("generalized_sym_eig: size mismatch");
    CholeskyFactor f = cholesky(m);  // throws if not SPD
    const std::size_t n = k.rows;
    // C = L^-1 K L^-T, computed column by column
    DenseMatrix c(n, n);
    std::vector<double> col(n);
    // first T = L^-1 K  (solve L t = k_col for each column)
    DenseMatrix t(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = k(i, j);
        auto y = f.forward(col);
        for (std::size_t i = 0; i < n; ++i) t(i, j) = y[i];
    }
    // C = (L^-1 T^T)^T  => apply forward solve to rows of T
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) col[j] = t(i, j);
        auto y = f.forward(col);
        for (std::size_t j = 0; j < n; ++j) c(i, j) = y[j];
    }
    // symmetrize to kill rounding skew before the eigensolve
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (c(i, j) + c(j, i));
            c(i, j) = c(j, i) = v;
        }
    EigResult std_eig = sym_eig(c);
    // phi = L^-T y
    EigResult out;
    out.eigenvalues = std_eig.eigenvalues;
    out.eigenvectors = DenseMatrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = std_eig.eigenvectors(i, j);
        auto phi = f.backward(col);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = phi[i];
    }
    return out;
}

LuFactor lu_factor(DenseMatrix a) {
    require_square(a, "lu_factor");
    const std::size_t n = a.rows;
    LuFactor f;
    f.perm.resize(n);
    std::iota(f.perm.begin(), f.perm.end(), 0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::abs(a(k, k));
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > best) {
                best = std::abs(a(i, k));
                p = i;
            }
        if (best == 0.0 || !std::isfinite(best)) {
            std::ostringstream os;
            os << "lu_factor: singular matrix at pivot " << k;
            throw std::runtime_error(os.str());
        }
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
            std::swap(f.perm[k], f.perm[p]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            a(i, k) /= a(k, k);
            const double lik = a(i, k);
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= lik * a(k, j);
        }
    }
    f.lu = std::move(a);
    return f;
}

std::vector<double> LuFactor::solve(const std::vector<double>& b) const {
    const std::size_t n = lu.rows;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[perm[i]];
        for (std::size_t k = 0; k < i; ++k) s -= lu(i, k) * x[k];
        x[i] = s;
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= lu(ii, k) * x[k];
        x[ii] = s / lu(ii, ii);
    }
    return x;
}

std::vector<double> LuFactor::solve_transposed(const std::vector<double>& b) const {
    // solve A^T x = b via U^T L^T P x = b
    const std::size_t n = lu.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= lu(k, i) * y[k];
        y[i] = s / lu(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= lu(k, ii) * y[k];
        y[ii] = s;
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[perm[i]] = y[i];
    return x;
}

double op_norm_2(const DenseMatrix& a) {
    if (a.rows == 0 || a.cols == 0) return 0.0;
    std::mt19937_64 rng(42);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(a.cols);
    for (auto& x : v) x = dist(rng);
    double nv = norm2(v);
    if (nv == 0.0) return 0.0;
    for (auto& x : v) x /= nv;
    double est = 0.0;
    for (int it = 0; it < 10000; ++it) {
        std::vector<double> av(a.rows, 0.0);
        for (std::size_t i = 0; i < a.rows; ++i) {
            double s = 0.0;
            const double* row = &a.a[i * a.cols];
            for (std::size_t j = 0; j < a.cols; ++j) s += row[j] * v[j];
            av[i] = s;
        }
        const double mu = norm2(av);  // ||A v||, v unit
        std::vector<double> w(a.cols, 0.0);
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* row = &a.a[i * a.cols];
            for (std::size_t j = 0; j < a.cols; ++j) w[j] += row[j] * av[i];
        }
        const double nw = norm2(w);
        if (nw == 0.0) return 0.0;
        for (auto& x : w) x /= nw;
        v = std::move(w);
        if (std::abs(mu - est) <= 1e-8 * std::max(mu, 1e-300)) return mu;
        est = mu;
    }
    return est;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul size mismatch");
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = &c.a[i * c.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.a[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("add size mismatch");
    DenseMatrix c = a;
    for (std::size_t i = 0; i < c.a.size(); ++i) c.a[i] += b.a[i];
    return c;
}

DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("sub size mismatch");
    DenseMatrix c = a;
    for (std::size_t i = 0; i < c.a.size(); ++i) c.a[i] -= b.a[i];
    return c;
}

std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x) {
    if (a.cols != x.size()) throw std::invalid_argument("matvec size mismatch");
    std::vector<double> y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

double max_abs(const DenseMatrix& a) {
    double m = 0.0;
    for (double v : a.a) m = std::max(m, std::abs(v));
    return m;
}

double fro_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.a) s += v * v;
    return std::sqrt(s);
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

DenseMatrix submatrix(const DenseMatrix& a, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols) {
    DenseMatrix s(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) s(i, j) = a(rows[i], cols[j]);
    return s;
}

}  // namespace geonew::linalg
