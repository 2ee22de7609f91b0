#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "sat/errors.hpp"
#include "sat/tape.hpp"

using sat::Mat;
using sat::Tape;
using sat::Var;

namespace {

Mat randm(int r, int c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (double& v : m.a) v = u(rng);
    return m;
}

bool close(double a, double b, double rtol = 1e-4, double atol = 1e-7) {
    return std::fabs(a - b) <= atol + rtol * std::max(std::fabs(a), std::fabs(b));
}

using ScalarFn = std::function<Var(Tape&, Var)>;

double value_of(const ScalarFn& f, const Mat& x0) {
    Tape t;
    Mat sink;
    Var x = t.param(x0, &sink);
    Var out = f(t, x);
    REQUIRE(t.value(out).size() == 1);
    return t.value(out).a[0];
}

Mat grad_of(const ScalarFn& f, const Mat& x0) {
    Tape t;
    Mat sink;
    Var x = t.param(x0, &sink);
    t.backward(f(t, x));
    if (sink.a.empty()) sink = Mat(x0.rows, x0.cols);
    return sink;
}

// Central differences against the analytic gradient, element by element.
void fd_check(const ScalarFn& f, const Mat& x0, double h = 1e-5) {
    Mat g = grad_of(f, x0);
    REQUIRE(g.rows == x0.rows);
    REQUIRE(g.cols == x0.cols);
    for (size_t i = 0; i < x0.a.size(); ++i) {
        Mat xp = x0, xm = x0;
        xp.a[i] += h;
        xm.a[i] -= h;
        double num = (value_of(f, xp) - value_of(f, xm)) / (2.0 * h);
        INFO("element ", i, ": analytic=", g.a[i], " numeric=", num);
        CHECK(close(g.a[i], num));
    }
}

using MatFn = std::function<Var(Tape&, Var)>;

// Reduces the op's matrix output to a scalar with random weights frozen
// up front, so every output entry contributes and repeated evaluations
// see the same function.
void fd_check_mat(const MatFn& op, const Mat& x0, std::mt19937_64& rng, double h = 1e-5) {
    int n = 0;
    {
        Tape t;
        Mat sink;
        Var x = t.param(x0, &sink);
        n = t.value(op(t, x)).size();
    }
    std::vector<double> w(static_cast<size_t>(n));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : w) v = u(rng);
    fd_check([op, w](Tape& t, Var x) { return t.dot_const(op(t, x), w); }, x0, h);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937_64 rng(7);
    Mat A = randm(3, 4, rng);
    Mat B = randm(3, 4, rng);

    fd_check_mat([B](Tape& t, Var x) { return t.add(x, t.leaf(B)); }, A, rng);
    fd_check_mat([B](Tape& t, Var x) { return t.sub(x, t.leaf(B)); }, A, rng);
    fd_check_mat([B](Tape& t, Var x) { return t.sub(t.leaf(B), x); }, A, rng);
    fd_check_mat([B](Tape& t, Var x) { return t.mul(x, t.leaf(B)); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.scale(x, -2.5); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.add_scalar(x, 0.75); }, A, rng);
    fd_check([](Tape& t, Var x) { return t.sum(t.mul(x, x)); }, A);
}

TEST_CASE("affine_scalar differentiates through input and both scalars") {
    std::mt19937_64 rng(11);
    Mat A = randm(4, 4, rng);
    Mat w(1, 1, 0.8), b(1, 1, -0.3);

    fd_check_mat([=](Tape& t, Var x) { return t.affine_scalar(x, t.leaf(w), t.leaf(b)); }, A, rng);
    fd_check_mat([=](Tape& t, Var wv) { return t.affine_scalar(t.leaf(A), wv, t.leaf(b)); }, w, rng);
    fd_check_mat([=](Tape& t, Var bv) { return t.affine_scalar(t.leaf(A), t.leaf(w), bv); }, b, rng);
}

TEST_CASE("matrix products match finite differences") {
    std::mt19937_64 rng(13);
    Mat A = randm(3, 5, rng);
    Mat B = randm(5, 2, rng);
    Mat C = randm(4, 5, rng);

    fd_check_mat([=](Tape& t, Var x) { return t.matmul(x, t.leaf(B)); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.matmul(t.leaf(A), x); }, B, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.matmul_nt(x, t.leaf(C)); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.matmul_nt(t.leaf(A), x); }, C, rng);
    fd_check_mat([](Tape& t, Var x) { return t.transpose(x); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.pairwise_half_sqdist(x, t.leaf(C)); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.pairwise_half_sqdist(t.leaf(A), x); }, C, rng);
}

TEST_CASE("broadcast adds match finite differences") {
    std::mt19937_64 rng(17);
    Mat A = randm(3, 4, rng);
    Mat r = randm(1, 4, rng);
    Mat c = randm(3, 1, rng);

    fd_check_mat([=](Tape& t, Var x) { return t.add_rowvec(x, t.leaf(r)); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.add_rowvec(t.leaf(A), x); }, r, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.add_colvec(x, t.leaf(c)); }, A, rng);
    fd_check_mat([=](Tape& t, Var x) { return t.add_colvec(t.leaf(A), x); }, c, rng);
}

TEST_CASE("row reductions and nonlinearities match finite differences") {
    std::mt19937_64 rng(19);
    Mat A = randm(3, 5, rng, -2.0, 2.0);

    fd_check_mat([](Tape& t, Var x) { return t.row_sumsq(x); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.logsumexp_rows(x); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.softmax_rows(x); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.gelu(x); }, A, rng);
}

TEST_CASE("layer norm matches finite differences in x, gain and bias") {
    std::mt19937_64 rng(23);
    Mat X = randm(3, 6, rng);
    Mat gain = randm(1, 6, rng, 0.5, 1.5);
    Mat bias = randm(1, 6, rng);

    fd_check_mat([=](Tape& t, Var x) { return t.layer_norm_rows(x, t.leaf(gain), t.leaf(bias)); },
                 X, rng, 1e-6);
    fd_check_mat([=](Tape& t, Var g) { return t.layer_norm_rows(t.leaf(X), g, t.leaf(bias)); },
                 gain, rng);
    fd_check_mat([=](Tape& t, Var b) { return t.layer_norm_rows(t.leaf(X), t.leaf(gain), b); },
                 bias, rng);
}

TEST_CASE("indexing ops match finite differences") {
    std::mt19937_64 rng(29);
    Mat T = randm(5, 3, rng);
    Mat A = randm(4, 6, rng);

    // Repeated ids exercise the scatter-add in the embedding gradient.
    fd_check_mat([](Tape& t, Var x) { return t.gather_rows(x, {2, 0, 2, 4}); }, T, rng);
    fd_check_mat([](Tape& t, Var x) { return t.slice_block(x, 1, 3, 2, 5); }, A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.slice_cols(x, 0, 4); }, A, rng);
    fd_check_mat(
        [](Tape& t, Var x) {
            return t.concat_cols({t.slice_cols(x, 4, 6), t.slice_cols(x, 0, 2)});
        },
        A, rng);
    fd_check_mat([](Tape& t, Var x) { return t.pick_cols(x, {5, 0, 3, 3}); }, A, rng);
    fd_check([](Tape& t, Var x) { return t.dot_const(x, {0.5, -1.0, 2.0}); }, randm(3, 1, rng));
}

TEST_CASE("forward values are correct on known inputs") {
    Tape t;
    Var x = t.leaf(Mat(1, 3));
    t.value(x);  // zero row

    Mat m(2, 3);
    m(0, 0) = 1.0; m(0, 1) = 2.0; m(0, 2) = 3.0;
    m(1, 0) = -1.0; m(1, 1) = 0.0; m(1, 2) = 1.0;
    Var v = t.leaf(m);

    const Mat& sm = t.value(t.softmax_rows(v));
    for (int i = 0; i < 2; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += sm(i, j);
        CHECK(close(s, 1.0, 1e-12, 1e-12));
    }
    CHECK(sm(0, 2) > sm(0, 1));

    const Mat& lse = t.value(t.logsumexp_rows(v));
    double naive = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    CHECK(close(lse(0, 0), naive, 1e-12, 1e-12));

    Mat g(1, 3);
    g(0, 0) = 0.0; g(0, 1) = 10.0; g(0, 2) = -10.0;
    const Mat& ge = t.value(t.gelu(t.leaf(g)));
    CHECK(ge(0, 0) == 0.0);
    CHECK(close(ge(0, 1), 10.0, 1e-9, 1e-9));
    CHECK(std::fabs(ge(0, 2)) < 1e-9);
}

TEST_CASE("a parameter used twice accumulates both contributions") {
    Mat x0(2, 1);
    x0(0, 0) = 1.5;
    x0(1, 0) = -0.5;
    Tape t;
    Mat sink;
    Var x = t.param(x0, &sink);
    t.backward(t.sum(t.mul(x, x)));
    REQUIRE(sink.size() == 2);
    CHECK(close(sink(0, 0), 3.0, 1e-12, 1e-12));
    CHECK(close(sink(1, 0), -1.0, 1e-12, 1e-12));
}

TEST_CASE("gradient sinks accumulate across separate backward passes") {
    Mat x0(1, 1, 2.0);
    Mat sink;
    {
        Tape t;
        Var x = t.param(x0, &sink);
        t.backward(t.mul(x, x));
    }
    {
        Tape t;
        Var x = t.param(x0, &sink);
        t.backward(t.scale(x, 3.0));
    }
    REQUIRE(sink.size() == 1);
    CHECK(close(sink.a[0], 4.0 + 3.0, 1e-12, 1e-12));
}

TEST_CASE("constant leaves receive no gradient") {
    Tape t;
    Var a = t.leaf(Mat(2, 2, 1.0));
    Mat sink;
    Var x = t.param(Mat(2, 2, 2.0), &sink);
    t.backward(t.sum(t.mul(a, x)));
    CHECK(t.grad(a).a.empty());
    REQUIRE(sink.size() == 4);
    for (double v : sink.a) CHECK(v == 1.0);
}

TEST_CASE("shape violations throw") {
    Tape t;
    Var a = t.leaf(Mat(2, 3, 1.0));
    Var b = t.leaf(Mat(3, 2, 1.0));
    CHECK_THROWS_AS((void)t.add(a, b), sat::ShapeMismatch);
    CHECK_THROWS_AS((void)t.matmul(a, a), sat::ShapeMismatch);
    CHECK_THROWS_AS(t.backward(a), sat::ShapeMismatch);
    CHECK_THROWS_AS((void)t.pick_cols(a, {0}), sat::ShapeMismatch);
    CHECK_THROWS_AS((void)t.slice_block(a, 0, 3, 0, 1), sat::ShapeMismatch);
}
