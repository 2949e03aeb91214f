#include "geonew/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace geonew::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

[[noreturn]] void shape_error(const char* what, std::size_t ar, std::size_t ac, std::size_t br,
                              std::size_t bc) {
    std::ostringstream os;
    os << what << ": shape mismatch (" << ar << "x" << ac << ") vs (" << br << "x" << bc << ")";
    throw std::invalid_argument(os.str());
}

}  // namespace

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    const std::size_t i = nodes_.size() - 1;
    compute(i);
    Var v;
    v.id = int(i);
    v.rows = nodes_[i].val.rows;
    v.cols = nodes_[i].val.cols;
    return v;
}

Var Tape::input(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(t);
    return push(std::move(n));
}

Var Tape::constant(Tensor t) { return input(std::move(t)); }

#define GEONEW_BINOP(name, opk)                                     \
    Var Tape::name(Var a, Var b) {                                  \
        if (a.rows != b.rows || a.cols != b.cols)                   \
            shape_error(#name, a.rows, a.cols, b.rows, b.cols);     \
        Node n;                                                     \
        n.op = Op::opk;                                             \
        n.a = a.id;                                                 \
        n.b = b.id;                                                 \
        return push(std::move(n));                                  \
    }

GEONEW_BINOP(add, Add)
GEONEW_BINOP(sub, Sub)
GEONEW_BINOP(mul, Mul)
#undef GEONEW_BINOP

Var Tape::smul(Var a, double c) {
    Node n;
    n.op = Op::Smul;
    n.a = a.id;
    n.c = c;
    return push(std::move(n));
}

Var Tape::scale(Var a, Var s) {
    if (s.rows != 1 || s.cols != 1) shape_error("scale", a.rows, a.cols, s.rows, s.cols);
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.b = s.id;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    if (a.cols != b.rows) shape_error("matmul", a.rows, a.cols, b.rows, b.cols);
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Tape::spmatmul_sym(const linalg::SparseMatrix* s, Var x) {
    if (s->cols != x.rows) shape_error("spmatmul_sym", s->rows, s->cols, x.rows, x.cols);
    Node n;
    n.op = Op::SpMatMulSym;
    n.a = x.id;
    n.sp = s;
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
    if (a.rows != b.rows || a.cols != b.cols) shape_error("dot", a.rows, a.cols, b.rows, b.cols);
    Node n;
    n.op = Op::Dot;
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

#define GEONEW_UNOP(name, opk)     \
    Var Tape::name(Var a) {        \
        Node n;                    \
        n.op = Op::opk;            \
        n.a = a.id;                \
        return push(std::move(n)); \
    }

GEONEW_UNOP(tanh_, Tanh)
GEONEW_UNOP(exp_, Exp)
GEONEW_UNOP(abs_, Abs)
GEONEW_UNOP(relu, Relu)
GEONEW_UNOP(gelu, Gelu)
GEONEW_UNOP(reciprocal, Reciprocal)
GEONEW_UNOP(softmax_rows, SoftmaxRows)
GEONEW_UNOP(sum, Sum)
GEONEW_UNOP(mean, Mean)
GEONEW_UNOP(row_sums, RowSums)
GEONEW_UNOP(max_all, MaxAll)
#undef GEONEW_UNOP

Var Tape::maximum(Var a, double c) {
    Node n;
    n.op = Op::MaxConst;
    n.a = a.id;
    n.c = c;
    return push(std::move(n));
}

Var Tape::minimum(Var a, double c) {
    Node n;
    n.op = Op::MinConst;
    n.a = a.id;
    n.c = c;
    return push(std::move(n));
}

Var Tape::layer_norm_rows(Var a, double eps) {
    Node n;
    n.op = Op::LayerNormRows;
    n.a = a.id;
    n.c = eps;
    return push(std::move(n));
}

Var Tape::concat_rows(Var a, Var b) {
    if (a.cols != b.cols) shape_error("concat_rows", a.rows, a.cols, b.rows, b.cols);
    Node n;
    n.op = Op::ConcatRows;
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
    if (a.rows != b.rows) shape_error("concat_cols", a.rows, a.cols, b.rows, b.cols);
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > a.rows) shape_error("slice_rows", a.rows, a.cols, r0, r1);
    Node n;
    n.op = Op::SliceRows;
    n.a = a.id;
    n.i0 = r0;
    n.i1 = r1;
    return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > a.cols) shape_error("slice_cols", a.rows, a.cols, c0, c1);
    Node n;
    n.op = Op::SliceCols;
    n.a = a.id;
    n.i0 = c0;
    n.i1 = c1;
    return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
    for (std::size_t i : idx)
        if (i >= a.rows) shape_error("gather_rows", a.rows, a.cols, i, 0);
    Node n;
    n.op = Op::GatherRows;
    n.a = a.id;
    n.idx = std::make_shared<const std::vector<std::size_t>>(std::move(idx));
    return push(std::move(n));
}

Var Tape::reshape(Var a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.rows * a.cols) shape_error("reshape", a.rows, a.cols, rows, cols);
    Node n;
    n.op = Op::Reshape;
    n.a = a.id;
    n.i0 = rows;
    n.i1 = cols;
    return push(std::move(n));
}

Var Tape::broadcast_row(Var a, std::size_t nrows) {
    if (a.rows != 1) shape_error("broadcast_row", a.rows, a.cols, 1, a.cols);
    Node n;
    n.op = Op::BroadcastRow;
    n.a = a.id;
    n.i0 = nrows;
    return push(std::move(n));
}

Var Tape::edge_antisym_product(
    Var w, std::shared_ptr<const std::vector<std::array<std::size_t, 2>>> edges,
    std::shared_ptr<const std::vector<std::array<std::size_t, 2>>> pairs) {
    Node n;
    n.op = Op::EdgeAntisymProduct;
    n.a = w.id;
    n.edges = std::move(edges);
    n.pairs = std::move(pairs);
    return push(std::move(n));
}

const Tensor& Tape::val(Var v) const { return nodes_.at(std::size_t(v.id)).val; }

void Tape::set_value(Var leaf, Tensor t) {
    Node& n = nodes_.at(std::size_t(leaf.id));
    if (n.op != Op::Leaf) throw std::invalid_argument("set_value: not a leaf");
    if (t.rows != n.val.rows || t.cols != n.val.cols)
        shape_error("set_value", n.val.rows, n.val.cols, t.rows, t.cols);
    n.val = std::move(t);
}

void Tape::replay_dependents(Var leaf) {
    if (dep_leaf_ != leaf.id || dep_size_ != nodes_.size()) {
        dep_.assign(nodes_.size(), 0);
        dep_[std::size_t(leaf.id)] = 1;
        for (std::size_t i = std::size_t(leaf.id) + 1; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            if ((n.a >= 0 && dep_[std::size_t(n.a)]) || (n.b >= 0 && dep_[std::size_t(n.b)]))
                dep_[i] = 1;
        }
        dep_leaf_ = leaf.id;
        dep_size_ = nodes_.size();
    }
    for (std::size_t i = std::size_t(leaf.id) + 1; i < nodes_.size(); ++i)
        if (dep_[i]) compute(i);
}

void Tape::compute(std::size_t i) {
    Node& n = nodes_[i];
    const Tensor& A = n.a >= 0 ? nodes_[std::size_t(n.a)].val : n.val;
    const Tensor& B = n.b >= 0 ? nodes_[std::size_t(n.b)].val : n.val;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            n.val = A;
            for (std::size_t k = 0; k < B.v.size(); ++k) n.val.v[k] += B.v[k];
            break;
        }
        case Op::Sub: {
            n.val = A;
            for (std::size_t k = 0; k < B.v.size(); ++k) n.val.v[k] -= B.v[k];
            break;
        }
        case Op::Mul: {
            n.val = A;
            for (std::size_t k = 0; k < B.v.size(); ++k) n.val.v[k] *= B.v[k];
            break;
        }
        case Op::Smul: {
            n.val = A;
            for (auto& x : n.val.v) x *= n.c;
            break;
        }
        case Op::Scale: {
            n.val = A;
            const double s = B.v[0];
            for (auto& x : n.val.v) x *= s;
            break;
        }
        case Op::MatMul: {
            n.val = Tensor(A.rows, B.cols);
            for (std::size_t r = 0; r < A.rows; ++r) {
                double* out = &n.val.v[r * B.cols];
                for (std::size_t k = 0; k < A.cols; ++k) {
                    const double a = A.v[r * A.cols + k];
                    if (a == 0.0) continue;
                    const double* brow = &B.v[k * B.cols];
                    for (std::size_t c = 0; c < B.cols; ++c) out[c] += a * brow[c];
                }
            }
            break;
        }
        case Op::SpMatMulSym: {
            n.val = Tensor(n.sp->rows, A.cols);
            for (std::size_t r = 0; r < n.sp->rows; ++r) {
                double* out = &n.val.v[r * A.cols];
                for (std::size_t k = n.sp->row_ptr[r]; k < n.sp->row_ptr[r + 1]; ++k) {
                    const double s = n.sp->vals[k];
                    const double* arow = &A.v[n.sp->col_idx[k] * A.cols];
                    for (std::size_t c = 0; c < A.cols; ++c) out[c] += s * arow[c];
                }
            }
            break;
        }
        case Op::Transpose: {
            n.val = Tensor(A.cols, A.rows);
            for (std::size_t r = 0; r < A.rows; ++r)
                for (std::size_t c = 0; c < A.cols; ++c) n.val(c, r) = A(r, c);
            break;
        }
        case Op::Dot: {
            double s = 0.0;
            for (std::size_t k = 0; k < A.v.size(); ++k) s += A.v[k] * B.v[k];
            n.val = Tensor::scalar(s);
            break;
        }
        case Op::Tanh: {
            n.val = A;
            for (auto& x : n.val.v) x = std::tanh(x);
            break;
        }
        case Op::Exp: {
            n.val = A;
            for (auto& x : n.val.v) x = std::exp(x);
            break;
        }
        case Op::Abs: {
            n.val = A;
            for (auto& x : n.val.v) x = std::abs(x);
            break;
        }
        case Op::Relu: {
            n.val = A;
            for (auto& x : n.val.v) x = x > 0.0 ? x : 0.0;
            break;
        }
        case Op::Gelu: {
            n.val = A;
            for (auto& x : n.val.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
            break;
        }
        case Op::Reciprocal: {
            n.val = A;
            for (auto& x : n.val.v) x = 1.0 / x;
            break;
        }
        case Op::MaxConst: {
            n.val = A;
            for (auto& x : n.val.v) x = std::max(x, n.c);
            break;
        }
        case Op::MinConst: {
            n.val = A;
            for (auto& x : n.val.v) x = std::min(x, n.c);
            break;
        }
        case Op::SoftmaxRows: {
            n.val = A;
            for (std::size_t r = 0; r < A.rows; ++r) {
                double mx = -1e300;
                for (std::size_t c = 0; c < A.cols; ++c) mx = std::max(mx, A(r, c));
                double z = 0.0;
                for (std::size_t c = 0; c < A.cols; ++c) {
                    n.val(r, c) = std::exp(A(r, c) - mx);
                    z += n.val(r, c);
                }
                for (std::size_t c = 0; c < A.cols; ++c) n.val(r, c) /= z;
            }
            break;
        }
        case Op::LayerNormRows: {
            n.val = A;
            const std::size_t m = A.cols;
            for (std::size_t r = 0; r < A.rows; ++r) {
                double mu = 0.0;
                for (std::size_t c = 0; c < m; ++c) mu += A(r, c);
                mu /= double(m);
                double var = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    const double d = A(r, c) - mu;
                    var += d * d;
                }
                var /= double(m);
                const double inv = 1.0 / std::sqrt(var + n.c);
                for (std::size_t c = 0; c < m; ++c) n.val(r, c) = (A(r, c) - mu) * inv;
            }
            break;
        }
        case Op::ConcatRows: {
            n.val = Tensor(A.rows + B.rows, A.cols);
            std::copy(A.v.begin(), A.v.end(), n.val.v.begin());
            std::copy(B.v.begin(), B.v.end(), n.val.v.begin() + long(A.v.size()));
            break;
        }
        case Op::ConcatCols: {
            n.val = Tensor(A.rows, A.cols + B.cols);
            for (std::size_t r = 0; r < A.rows; ++r) {
                std::copy(&A.v[r * A.cols], &A.v[r * A.cols] + A.cols, &n.val.v[r * n.val.cols]);
                std::copy(&B.v[r * B.cols], &B.v[r * B.cols] + B.cols,
                          &n.val.v[r * n.val.cols + A.cols]);
            }
            break;
        }
        case Op::SliceRows: {
            n.val = Tensor(n.i1 - n.i0, A.cols);
            std::copy(&A.v[n.i0 * A.cols], &A.v[n.i1 * A.cols], n.val.v.begin());
            break;
        }
        case Op::SliceCols: {
            n.val = Tensor(A.rows, n.i1 - n.i0);
            for (std::size_t r = 0; r < A.rows; ++r)
                std::copy(&A.v[r * A.cols + n.i0], &A.v[r * A.cols + n.i1],
                          &n.val.v[r * n.val.cols]);
            break;
        }
        case Op::GatherRows: {
            n.val = Tensor(n.idx->size(), A.cols);
            for (std::size_t r = 0; r < n.idx->size(); ++r)
                std::copy(&A.v[(*n.idx)[r] * A.cols], &A.v[(*n.idx)[r] * A.cols] + A.cols,
                          &n.val.v[r * A.cols]);
            break;
        }
        case Op::Reshape: {
            n.val = A;
            n.val.rows = n.i0;
            n.val.cols = n.i1;
            break;
        }
        case Op::BroadcastRow: {
            n.val = Tensor(n.i0, A.cols);
            for (std::size_t r = 0; r < n.i0; ++r)
                std::copy(A.v.begin(), A.v.end(), &n.val.v[r * A.cols]);
            break;
        }
        case Op::Sum: {
            double s = 0.0;
            for (double x : A.v) s += x;
            n.val = Tensor::scalar(s);
            break;
        }
        case Op::Mean: {
            double s = 0.0;
            for (double x : A.v) s += x;
            n.val = Tensor::scalar(s / double(A.v.size()));
            break;
        }
        case Op::RowSums: {
            n.val = Tensor(A.rows, 1);
            for (std::size_t r = 0; r < A.rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < A.cols; ++c) s += A(r, c);
                n.val(r, 0) = s;
            }
            break;
        }
        case Op::MaxAll: {
            double mx = A.v[0];
            for (double x : A.v) mx = std::max(mx, x);
            n.val = Tensor::scalar(mx);
            break;
        }
        case Op::EdgeAntisymProduct: {
            const auto& edges = *n.edges;
            const auto& pairs = *n.pairs;
            n.val = Tensor(pairs.size(), edges.size());
            const std::size_t nc = A.cols;
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                const double* wi = &A.v[pairs[p][0] * nc];
                const double* wj = &A.v[pairs[p][1] * nc];
                double* out = &n.val.v[p * edges.size()];
                for (std::size_t e = 0; e < edges.size(); ++e) {
                    const std::size_t a = edges[e][0], b = edges[e][1];
                    out[e] = wi[a] * wj[b] - wi[b] * wj[a];
                }
            }
            break;
        }
    }
}

Tensor& Tape::gref(int id, std::size_t rows, std::size_t cols) {
    Tensor& g = grads_[std::size_t(id)];
    if (g.v.empty()) g = Tensor(rows, cols);
    return g;
}

void Tape::backward(Var out) {
    if (out.rows != 1 || out.cols != 1)
        throw std::invalid_argument("backward: output not scalar and no seed given");
    backward(out, Tensor::scalar(1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
    if (out.id < 0 || std::size_t(out.id) >= nodes_.size())
        throw std::invalid_argument("backward called before forward");
    const Node& on = nodes_[std::size_t(out.id)];
    if (seed.rows != on.val.rows || seed.cols != on.val.cols)
        shape_error("backward seed", on.val.rows, on.val.cols, seed.rows, seed.cols);
    grads_.assign(nodes_.size(), Tensor{});
    grads_[std::size_t(out.id)] = seed;
    for (std::size_t i = std::size_t(out.id) + 1; i-- > 0;) {
        if (grads_[i].v.empty()) continue;
        accumulate(i);
    }
}

void Tape::accumulate(std::size_t i) {
    const Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    const Tensor* A = n.a >= 0 ? &nodes_[std::size_t(n.a)].val : nullptr;
    const Tensor* B = n.b >= 0 ? &nodes_[std::size_t(n.b)].val : nullptr;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                ga.v[k] += g.v[k];
                gb.v[k] += g.v[k];
            }
            break;
        }
        case Op::Sub: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                ga.v[k] += g.v[k];
                gb.v[k] -= g.v[k];
            }
            break;
        }
        case Op::Mul: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                ga.v[k] += g.v[k] * B->v[k];
                gb.v[k] += g.v[k] * A->v[k];
            }
            break;
        }
        case Op::Smul: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) ga.v[k] += n.c * g.v[k];
            break;
        }
        case Op::Scale: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gs = gref(n.b, 1, 1);
            const double s = B->v[0];
            double acc = 0.0;
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                ga.v[k] += s * g.v[k];
                acc += A->v[k] * g.v[k];
            }
            gs.v[0] += acc;
            break;
        }
        case Op::MatMul: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            // ga += g B^T ; gb += A^T g
            for (std::size_t r = 0; r < A->rows; ++r)
                for (std::size_t k = 0; k < B->cols; ++k) {
                    const double gv = g.v[r * B->cols + k];
                    if (gv == 0.0) continue;
                    for (std::size_t c = 0; c < A->cols; ++c)
                        ga.v[r * A->cols + c] += gv * B->v[c * B->cols + k];
                }
            for (std::size_t r = 0; r < A->rows; ++r)
                for (std::size_t c = 0; c < A->cols; ++c) {
                    const double av = A->v[r * A->cols + c];
                    if (av == 0.0) continue;
                    const double* grow = &g.v[r * B->cols];
                    double* gbrow = &gb.v[c * B->cols];
                    for (std::size_t k = 0; k < B->cols; ++k) gbrow[k] += av * grow[k];
                }
            break;
        }
        case Op::SpMatMulSym: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            // gx += S^T g = S g (S symmetric)
            for (std::size_t r = 0; r < n.sp->rows; ++r) {
                const double* grow = &g.v[r * A->cols];
                for (std::size_t k = n.sp->row_ptr[r]; k < n.sp->row_ptr[r + 1]; ++k) {
                    const double s = n.sp->vals[k];
                    double* arow = &ga.v[n.sp->col_idx[k] * A->cols];
                    for (std::size_t c = 0; c < A->cols; ++c) arow[c] += s * grow[c];
                }
            }
            break;
        }
        case Op::Transpose: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) ga(c, r) += g(r, c);
            break;
        }
        case Op::Dot: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            const double gv = g.v[0];
            for (std::size_t k = 0; k < A->v.size(); ++k) {
                ga.v[k] += gv * B->v[k];
                gb.v[k] += gv * A->v[k];
            }
            break;
        }
        case Op::Tanh: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k)
                ga.v[k] += g.v[k] * (1.0 - n.val.v[k] * n.val.v[k]);
            break;
        }
        case Op::Exp: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) ga.v[k] += g.v[k] * n.val.v[k];
            break;
        }
        case Op::Abs: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                const double x = A->v[k];
                ga.v[k] += g.v[k] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
            }
            break;
        }
        case Op::Relu: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) ga.v[k] += A->v[k] > 0.0 ? g.v[k] : 0.0;
            break;
        }
        case Op::Gelu: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) {
                const double x = A->v[k];
                const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                                 x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga.v[k] += g.v[k] * d;
            }
            break;
        }
        case Op::Reciprocal: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k)
                ga.v[k] -= g.v[k] * n.val.v[k] * n.val.v[k];
            break;
        }
        case Op::MaxConst: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k)
                if (A->v[k] > n.c) ga.v[k] += g.v[k];
            break;
        }
        case Op::MinConst: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k)
                if (A->v[k] < n.c) ga.v[k] += g.v[k];
            break;
        }
        case Op::SoftmaxRows: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t r = 0; r < A->rows; ++r) {
                double dotgy = 0.0;
                for (std::size_t c = 0; c < A->cols; ++c) dotgy += g(r, c) * n.val(r, c);
                for (std::size_t c = 0; c < A->cols; ++c)
                    ga(r, c) += n.val(r, c) * (g(r, c) - dotgy);
            }
            break;
        }
        case Op::LayerNormRows: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            const std::size_t m = A->cols;
            for (std::size_t r = 0; r < A->rows; ++r) {
                double mu = 0.0;
                for (std::size_t c = 0; c < m; ++c) mu += (*A)(r, c);
                mu /= double(m);
                double var = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    const double d = (*A)(r, c) - mu;
                    var += d * d;
                }
                var /= double(m);
                const double inv = 1.0 / std::sqrt(var + n.c);
                double gmean = 0.0, gymean = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    gmean += g(r, c);
                    gymean += g(r, c) * n.val(r, c);
                }
                gmean /= double(m);
                gymean /= double(m);
                for (std::size_t c = 0; c < m; ++c)
                    ga(r, c) += inv * (g(r, c) - gmean - n.val(r, c) * gymean);
            }
            break;
        }
        case Op::ConcatRows: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            for (std::size_t k = 0; k < A->v.size(); ++k) ga.v[k] += g.v[k];
            for (std::size_t k = 0; k < B->v.size(); ++k) gb.v[k] += g.v[A->v.size() + k];
            break;
        }
        case Op::ConcatCols: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            Tensor& gb = gref(n.b, B->rows, B->cols);
            for (std::size_t r = 0; r < A->rows; ++r) {
                for (std::size_t c = 0; c < A->cols; ++c) ga(r, c) += g.v[r * g.cols + c];
                for (std::size_t c = 0; c < B->cols; ++c)
                    gb(r, c) += g.v[r * g.cols + A->cols + c];
            }
            break;
        }
        case Op::SliceRows: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) ga.v[n.i0 * A->cols + k] += g.v[k];
            break;
        }
        case Op::SliceCols: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t r = 0; r < A->rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) ga(r, n.i0 + c) += g(r, c);
            break;
        }
        case Op::GatherRows: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t r = 0; r < n.idx->size(); ++r)
                for (std::size_t c = 0; c < A->cols; ++c)
                    ga((*n.idx)[r], c) += g.v[r * A->cols + c];
            break;
        }
        case Op::Reshape: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t k = 0; k < g.v.size(); ++k) ga.v[k] += g.v[k];
            break;
        }
        case Op::BroadcastRow: {
            Tensor& ga = gref(n.a, 1, A->cols);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) ga.v[c] += g(r, c);
            break;
        }
        case Op::Sum: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            const double gv = g.v[0];
            for (auto& x : ga.v) x += gv;
            break;
        }
        case Op::Mean: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            const double gv = g.v[0] / double(A->v.size());
            for (auto& x : ga.v) x += gv;
            break;
        }
        case Op::RowSums: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            for (std::size_t r = 0; r < A->rows; ++r)
                for (std::size_t c = 0; c < A->cols; ++c) ga(r, c) += g(r, 0);
            break;
        }
        case Op::MaxAll: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            std::size_t arg = 0;
            for (std::size_t k = 1; k < A->v.size(); ++k)
                if (A->v[k] > A->v[arg]) arg = k;  // first max, deterministic
            ga.v[arg] += g.v[0];
            break;
        }
        case Op::EdgeAntisymProduct: {
            Tensor& ga = gref(n.a, A->rows, A->cols);
            const auto& edges = *n.edges;
            const auto& pairs = *n.pairs;
            const std::size_t nc = A->cols;
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                const std::size_t pi = pairs[p][0], pj = pairs[p][1];
                const double* wi = &A->v[pi * nc];
                const double* wj = &A->v[pj * nc];
                double* gi = &ga.v[pi * nc];
                double* gj = &ga.v[pj * nc];
                const double* grow = &g.v[p * edges.size()];
                for (std::size_t e = 0; e < edges.size(); ++e) {
                    const std::size_t a = edges[e][0], b = edges[e][1];
                    const double gv = grow[e];
                    if (gv == 0.0) continue;
                    gi[a] += gv * wj[b];
                    gj[b] += gv * wi[a];
                    gi[b] -= gv * wj[a];
                    gj[a] -= gv * wi[b];
                }
            }
            break;
        }
    }
}

Tensor Tape::grad(Var v) const {
    const Tensor& g = grads_.at(std::size_t(v.id));
    if (!g.v.empty()) return g;
    const Node& n = nodes_[std::size_t(v.id)];
    return Tensor(n.val.rows, n.val.cols);
}

}  // namespace geonew::ad
