#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "geonew/autodiff.hpp"

using namespace geonew;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
    std::normal_distribution<double> d(0.0, s);
    Tensor t(r, c);
    for (auto& x : t.v) x = d(rng);
    return t;
}

// Central finite differences of a scalar function of one leaf tensor.
Tensor fd_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-6) {
    Tensor g(x.rows, x.cols);
    for (std::size_t k = 0; k < x.v.size(); ++k) {
        const double orig = x.v[k];
        const double step = h * (1.0 + std::abs(orig));
        x.v[k] = orig + step;
        const double fp = f(x);
        x.v[k] = orig - step;
        const double fm = f(x);
        x.v[k] = orig;
        g.v[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.v.size() == b.v.size());
    for (std::size_t k = 0; k < a.v.size(); ++k) {
        const double scale = std::max({std::abs(a.v[k]), std::abs(b.v[k]), 1.0});
        CHECK(std::abs(a.v[k] - b.v[k]) <= tol * scale);
    }
}

}  // namespace

TEST_CASE("grad of sum(x) is all ones") {
    Tape t;
    std::mt19937_64 rng(1);
    Var x = t.input(random_tensor(3, 4, rng));
    Var s = t.sum(x);
    t.backward(s);
    auto g = t.grad(x);
    for (double v : g.v) CHECK(v == 1.0);
}

TEST_CASE("grad of x^T A x is (A + A^T) x") {
    Tape t;
    std::mt19937_64 rng(2);
    Tensor a_val = random_tensor(5, 5, rng);
    Tensor x_val = random_tensor(5, 1, rng);
    Var a = t.constant(a_val);
    Var x = t.input(x_val);
    Var quad = t.dot(x, t.matmul(a, x));
    t.backward(quad);
    auto g = t.grad(x);
    for (std::size_t i = 0; i < 5; ++i) {
        double expected = 0.0;
        for (std::size_t j = 0; j < 5; ++j)
            expected += (a_val(i, j) + a_val(j, i)) * x_val(j, 0);
        CHECK(g(i, 0) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("softmax rows: forward sums to 1, gradient matches central differences") {
    std::mt19937_64 rng(3);
    Tensor x_val = random_tensor(4, 6, rng);
    Tensor seed = random_tensor(4, 6, rng);
    {
        Tape t;
        Var x = t.input(x_val);
        Var y = t.softmax_rows(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 6; ++c) s += t.val(y)(r, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
        Var obj = t.sum(t.mul(y, t.constant(seed)));
        t.backward(obj);
        auto g = t.grad(x);
        auto fg = fd_grad(
            [&](const Tensor& xv) {
                Tape tt;
                Var xx = tt.input(xv);
                Var yy = tt.softmax_rows(xx);
                Var oo = tt.sum(tt.mul(yy, tt.constant(seed)));
                return tt.val(oo).v[0];
            },
            x_val, 1e-5);
        check_close(g, fg, 1e-6);
    }
}

TEST_CASE("elementwise and structural primitives gradient-check") {
    std::mt19937_64 rng(4);
    // a composite touching most primitives
    Tensor x_val = random_tensor(3, 5, rng, 0.8);
    auto run = [&](const Tensor& xv, Tape* tp, Var* xout) {
        Tape local;
        Tape& t = tp ? *tp : local;
        Var x = t.input(xv);
        if (xout) *xout = x;
        Var h = t.tanh_(x);
        h = t.add(h, t.gelu(x));
        h = t.sub(h, t.relu(t.smul(x, 0.5)));
        h = t.mul(h, t.exp_(t.smul(x, 0.1)));
        Var ln = t.layer_norm_rows(h);
        Var sm = t.softmax_rows(t.slice_cols(ln, 1, 4));
        Var cat = t.concat_cols(sm, t.slice_cols(h, 0, 2));
        Var gr = t.gather_rows(cat, {2, 0, 1, 2});
        Var rs = t.row_sums(t.abs_(gr));
        Var mx = t.max_all(rs);
        Var rec = t.reciprocal(t.maximum(mx, 0.5));
        Var sc = t.scale(cat, rec);
        Var br = t.broadcast_row(t.slice_rows(sc, 0, 1), 3);
        Var fin = t.mean(t.mul(br, br));
        fin = t.add(fin, t.minimum(t.sum(gr), 2.0));
        return fin;
    };
    Tape t;
    Var x;
    Var out = run(x_val, &t, &x);
    t.backward(out);
    auto g = t.grad(x);
    auto fg = fd_grad(
        [&](const Tensor& xv) {
            Tape tt;
            Var dummy;
            // rebuild with same structure
            Tape* tp = &tt;
            Var o = [&]() {
                Var xx = tt.input(xv);
                Var h = tt.tanh_(xx);
                h = tt.add(h, tt.gelu(xx));
                h = tt.sub(h, tt.relu(tt.smul(xx, 0.5)));
                h = tt.mul(h, tt.exp_(tt.smul(xx, 0.1)));
                Var ln = tt.layer_norm_rows(h);
                Var sm = tt.softmax_rows(tt.slice_cols(ln, 1, 4));
                Var cat = tt.concat_cols(sm, tt.slice_cols(h, 0, 2));
                Var gr = tt.gather_rows(cat, {2, 0, 1, 2});
                Var rs = tt.row_sums(tt.abs_(gr));
                Var mx = tt.max_all(rs);
                Var rec = tt.reciprocal(tt.maximum(mx, 0.5));
                Var sc = tt.scale(cat, rec);
                Var br = tt.broadcast_row(tt.slice_rows(sc, 0, 1), 3);
                Var fin = tt.mean(tt.mul(br, br));
                fin = tt.add(fin, tt.minimum(tt.sum(gr), 2.0));
                return fin;
            }();
            (void)tp;
            (void)dummy;
            return tt.val(o).v[0];
        },
        x_val, 1e-6);
    check_close(g, fg, 1e-5);
}

TEST_CASE("matmul / transpose / concat_rows / spmatmul gradient-check") {
    std::mt19937_64 rng(5);
    Tensor a_val = random_tensor(4, 3, rng);
    Tensor b_val = random_tensor(3, 4, rng);
    // symmetric sparse matrix
    linalg::DenseMatrix sd(4, 4);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if ((i + j) % 2 == 0) sd(i, j) = sd(j, i) = nd(rng);
    std::vector<std::array<double, 3>> trip;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            if (sd(i, j) != 0.0) trip.push_back({double(i), double(j), sd(i, j)});
    auto sp = linalg::SparseMatrix::from_triplets(4, 4, trip);

    auto build = [&](Tape& t, const Tensor& av, const Tensor& bv) {
        Var a = t.input(av);
        Var b = t.input(bv);
        Var m = t.matmul(a, b);                    // 4x4
        Var s = t.spmatmul_sym(&sp, m);            // 4x4
        Var c = t.concat_rows(s, t.transpose(m));  // 8x4
        return std::tuple{t.sum(t.mul(c, c)), a, b};
    };
    Tape t;
    auto [out, a, b] = build(t, a_val, b_val);
    t.backward(out);
    auto ga = t.grad(a);
    auto gb = t.grad(b);
    auto fga = fd_grad(
        [&](const Tensor& av) {
            Tape tt;
            auto [o, aa, bb] = build(tt, av, b_val);
            return tt.val(o).v[0];
        },
        a_val, 1e-6);
    auto fgb = fd_grad(
        [&](const Tensor& bv) {
            Tape tt;
            auto [o, aa, bb] = build(tt, a_val, bv);
            return tt.val(o).v[0];
        },
        b_val, 1e-6);
    check_close(ga, fga, 1e-6);
    check_close(gb, fgb, 1e-6);
}

TEST_CASE("edge_antisym_product: forward formula and gradient-check") {
    std::mt19937_64 rng(6);
    Tensor w_val = random_tensor(4, 6, rng);
    auto edges = std::make_shared<const std::vector<std::array<std::size_t, 2>>>(
        std::vector<std::array<std::size_t, 2>>{{0, 1}, {1, 3}, {2, 5}, {0, 4}});
    auto pairs = std::make_shared<const std::vector<std::array<std::size_t, 2>>>(
        std::vector<std::array<std::size_t, 2>>{{0, 1}, {0, 2}, {1, 3}, {2, 3}});
    Tensor seed = random_tensor(4, 4, rng);
    Tape t;
    Var w = t.input(w_val);
    Var w1 = t.edge_antisym_product(w, edges, pairs);
    // spot check the defining formula
    for (std::size_t p = 0; p < pairs->size(); ++p)
        for (std::size_t e = 0; e < edges->size(); ++e) {
            const auto [i, j] = (*pairs)[p];
            const auto [a, b] = (*edges)[e];
            const double expected = w_val(i, a) * w_val(j, b) - w_val(i, b) * w_val(j, a);
            CHECK(t.val(w1)(p, e) == doctest::Approx(expected).epsilon(1e-14));
        }
    Var obj = t.sum(t.mul(w1, t.constant(seed)));
    t.backward(obj);
    auto g = t.grad(w);
    auto fg = fd_grad(
        [&](const Tensor& wv) {
            Tape tt;
            Var ww = tt.input(wv);
            Var w1v = tt.edge_antisym_product(ww, edges, pairs);
            return tt.val(tt.sum(tt.mul(w1v, tt.constant(seed)))).v[0];
        },
        w_val, 1e-6);
    check_close(g, fg, 1e-6);
}

TEST_CASE("backward: identity map passes the seed through") {
    Tape t;
    std::mt19937_64 rng(7);
    Tensor x_val = random_tensor(3, 2, rng);
    Var x = t.input(x_val);
    Var y = t.add(x, t.constant(Tensor(3, 2)));
    Tensor seed = random_tensor(3, 2, rng);
    t.backward(y, seed);
    auto g = t.grad(x);
    for (std::size_t k = 0; k < seed.v.size(); ++k) CHECK(g.v[k] == seed.v[k]);
}

TEST_CASE("backward: chain tanh(Wx) matches finite differences") {
    std::mt19937_64 rng(8);
    Tensor w_val = random_tensor(4, 4, rng);
    Tensor x_val = random_tensor(4, 1, rng);
    Tape t;
    Var w = t.input(w_val);
    Var x = t.constant(x_val);
    Var y = t.sum(t.tanh_(t.matmul(w, x)));
    t.backward(y);
    auto g = t.grad(w);
    auto fg = fd_grad(
        [&](const Tensor& wv) {
            Tape tt;
            Var ww = tt.input(wv);
            Var yy = tt.sum(tt.tanh_(tt.matmul(ww, tt.constant(x_val))));
            return tt.val(yy).v[0];
        },
        w_val, 1e-6);
    check_close(g, fg, 1e-6);
}

TEST_CASE("backward: linear in the seed, repeated calls independent") {
    std::mt19937_64 rng(9);
    Tensor x_val = random_tensor(3, 3, rng);
    Tape t;
    Var x = t.input(x_val);
    Var y = t.tanh_(t.matmul(x, x));
    Tensor s1 = random_tensor(3, 3, rng);
    Tensor s2 = random_tensor(3, 3, rng);
    Tensor s12(3, 3);
    for (std::size_t k = 0; k < 9; ++k) s12.v[k] = s1.v[k] + s2.v[k];
    t.backward(y, s1);
    auto g1 = t.grad(x);
    t.backward(y, s2);
    auto g2 = t.grad(x);
    t.backward(y, s12);
    auto g12 = t.grad(x);
    for (std::size_t k = 0; k < 9; ++k)
        CHECK(g12.v[k] == doctest::Approx(g1.v[k] + g2.v[k]).epsilon(1e-12));
}

TEST_CASE("determinism: identical tapes give bit-identical gradients") {
    auto run = [] {
        std::mt19937_64 rng(10);
        Tape t;
        Var x = t.input(random_tensor(5, 5, rng));
        Var y = t.sum(t.softmax_rows(t.matmul(x, t.gelu(x))));
        t.backward(y);
        return t.grad(x).v;
    };
    CHECK(run() == run());
}

TEST_CASE("untouched leaves get zero gradient") {
    Tape t;
    Var x = t.input(Tensor::scalar(2.0));
    Var unused = t.input(Tensor(4, 4, 1.0));
    Var y = t.mul(x, x);
    t.backward(y);
    auto g = t.grad(unused);
    for (double v : g.v) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch errors report both shapes") {
    Tape t;
    Var a = t.input(Tensor(2, 3));
    Var b = t.input(Tensor(3, 2));
    try {
        t.add(a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("3x2") != std::string::npos);
    }
    CHECK_THROWS_AS(t.backward(a), std::invalid_argument);  // non-scalar, no seed
    CHECK_THROWS_AS(t.backward(a, Tensor(1, 1)), std::invalid_argument);  // seed mismatch
}

TEST_CASE("set_value + replay_dependents recomputes the dependent subgraph") {
    Tape t;
    Var x = t.input(Tensor::scalar(1.0));
    Var c = t.constant(Tensor::scalar(3.0));
    Var y = t.mul(t.add(x, c), x);  // (x + 3) x
    CHECK(t.val(y).v[0] == 4.0);
    t.set_value(x, Tensor::scalar(2.0));
    t.replay_dependents(x);
    CHECK(t.val(y).v[0] == 10.0);
    t.backward(y);
    CHECK(t.grad(x).v[0] == doctest::Approx(2.0 * 2.0 + 3.0));  // 2x + 3
}
