#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <memory>
#include <vector>

#include "geonew/linalg.hpp"

namespace geonew::ad {

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }
    static Tensor from_dense(const linalg::DenseMatrix& d) {
        Tensor t;
        t.rows = d.rows;
        t.cols = d.cols;
        t.v = d.a;
        return t;
    }
    linalg::DenseMatrix to_dense() const {
        linalg::DenseMatrix d(rows, cols);
        d.a = v;
        return d;
    }
    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    std::size_t size() const { return v.size(); }
};

struct Var {
    int id = -1;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// Reverse-mode tape over dense 2-D tensors. One tape per forward pass;
/// values are replayable and gradients accumulate in fixed reverse order,
/// so identical tapes produce bit-identical gradients.
class Tape {
public:
    // leaves
    Var input(Tensor t);
    Var constant(Tensor t);

    // arithmetic
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);          // elementwise
    Var smul(Var a, double c);      // by compile-time constant scalar
    Var scale(Var a, Var s);        // by 1x1 Var
    Var matmul(Var a, Var b);
    Var spmatmul_sym(const linalg::SparseMatrix* s, Var x);  // s symmetric, constant
    Var transpose(Var a);
    Var dot(Var a, Var b);          // sum(a .* b) -> 1x1

    // elementwise nonlinearities
    Var tanh_(Var a);
    Var exp_(Var a);
    Var abs_(Var a);
    Var relu(Var a);
    Var gelu(Var a);
    Var reciprocal(Var a);
    Var maximum(Var a, double c);
    Var minimum(Var a, double c);

    // normalizations
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var a, double eps = 1e-5);

    // structure
    Var concat_rows(Var a, Var b);
    Var concat_cols(Var a, Var b);
    Var slice_rows(Var a, std::size_t r0, std::size_t r1);
    Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    Var gather_rows(Var a, std::vector<std::size_t> idx);
    Var reshape(Var a, std::size_t rows, std::size_t cols);
    Var broadcast_row(Var a, std::size_t n);  // 1xd -> nxd

    // reductions
    Var sum(Var a);
    Var mean(Var a);
    Var row_sums(Var a);  // nxm -> nx1
    Var max_all(Var a);   // -> 1x1, subgradient to first argmax

    /// W1 of the partition projection: out[(ij),e] = W(i,a_e) W(j,b_e) - W(i,b_e) W(j,a_e)
    /// over fine edges e = (a_e, b_e) and reduced pairs (i, j).
    Var edge_antisym_product(Var w,
                             std::shared_ptr<const std::vector<std::array<std::size_t, 2>>> edges,
                             std::shared_ptr<const std::vector<std::array<std::size_t, 2>>> pairs);

    const Tensor& val(Var v) const;
    void set_value(Var leaf, Tensor t);

    /// Recompute every node in the forward closure of the given leaf
    /// (used by the Newton loop to move only the state-dependent subgraph).
    void replay_dependents(Var leaf);

    /// Reverse pass from `out`. Without a seed, `out` must be 1x1 (seed 1);
    /// otherwise the seed is the cotangent of `out`. Each call starts from
    /// zero gradients, so calls are independent and linear in the seed.
    void backward(Var out);
    void backward(Var out, const Tensor& seed);

    /// Reverse pass that only propagates through nodes in the forward closure
    /// of `leaf`; gradients w.r.t. that leaf are exact while the rest of the
    /// graph is left untouched (the per-state Jacobian rows of a residual).
    void backward_restricted(Var out, const Tensor& seed, Var leaf);

    /// Gradient accumulated at `v` by the last backward call (zeros if the
    /// node was not touched).
    Tensor grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : unsigned char {
        Leaf, Add, Sub, Mul, Smul, Scale, MatMul, SpMatMulSym, Transpose, Dot,
        Tanh, Exp, Abs, Relu, Gelu, Reciprocal, MaxConst, MinConst,
        SoftmaxRows, LayerNormRows,
        ConcatRows, ConcatCols, SliceRows, SliceCols, GatherRows, Reshape, BroadcastRow,
        Sum, Mean, RowSums, MaxAll,
        EdgeAntisymProduct
    };
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1;
        double c = 0.0;
        std::size_t i0 = 0, i1 = 0;
        Tensor val;
        std::shared_ptr<const std::vector<std::size_t>> idx;
        std::shared_ptr<const std::vector<std::array<std::size_t, 2>>> edges, pairs;
        const linalg::SparseMatrix* sp = nullptr;
    };

    std::deque<Node> nodes_;  // deque: values stay referenceable while appending
    std::vector<Tensor> grads_;
    int dep_leaf_ = -1;
    std::size_t dep_size_ = 0;
    std::vector<char> dep_;

    Var push(Node n);
    void compute(std::size_t i);
    void accumulate(std::size_t i);
    Tensor& gref(int id, std::size_t rows, std::size_t cols);
};

}  // namespace geonew::ad
