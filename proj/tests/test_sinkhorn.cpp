#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sat/errors.hpp"
#include "sat/sinkhorn.hpp"

using namespace sat;

namespace {

Mat randm(int r, int c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (double& v : m.a) v = u(rng);
    return m;
}

PointCloud cloud1d(std::vector<double> xs) {
    Mat m(static_cast<int>(xs.size()), 1);
    m.a = std::move(xs);
    return cloud_from_rows(std::move(m));
}

double sq_diam(const PointCloud& a, const PointCloud& b) {
    Mat all(a.points.rows + b.points.rows, a.points.cols);
    for (int i = 0; i < a.points.rows; ++i)
        for (int k = 0; k < a.points.cols; ++k) all(i, k) = a.points(i, k);
    for (int j = 0; j < b.points.rows; ++j)
        for (int k = 0; k < b.points.cols; ++k) all(a.points.rows + j, k) = b.points(j, k);
    double best = 0.0;
    for (int i = 0; i < all.rows; ++i)
        for (int j = 0; j < all.rows; ++j) {
            double s = 0.0;
            for (int k = 0; k < all.cols; ++k) s += (all(i, k) - all(j, k)) * (all(i, k) - all(j, k));
            best = std::max(best, s);
        }
    return best;
}

// Deterministic iteration pattern for derivative checks: a fixed blur
// and a tolerance below machine precision, so every evaluation either
// reaches a bitwise fixed point or spends the whole budget.
SinkhornConfig fd_config(double blur) {
    SinkhornConfig cfg;
    cfg.epsilon = blur;
    cfg.relative_epsilon = false;
    cfg.max_iters = 80;
    cfg.tol = 1e-300;
    return cfg;
}

void check_gradients(const PointCloud& x, const PointCloud& y, const SinkhornConfig& cfg) {
    SinkhornGradResult res = sinkhorn_backward(x, y, cfg);
    double scale = 0.0;
    for (double v : x.points.a) scale = std::max(scale, std::fabs(v));
    for (double v : y.points.a) scale = std::max(scale, std::fabs(v));
    double gscale = 1e-12;
    for (double v : res.dx.a) gscale = std::max(gscale, std::fabs(v));
    for (double v : res.dy.a) gscale = std::max(gscale, std::fabs(v));
    double h = 1e-4 * std::max(scale, 1e-6);

    auto value_at = [&](const PointCloud& xa, const PointCloud& ya) {
        return sinkhorn_divergence(xa, ya, cfg).value;
    };
    for (int side = 0; side < 2; ++side) {
        const PointCloud& base = side == 0 ? x : y;
        const Mat& grad = side == 0 ? res.dx : res.dy;
        for (size_t i = 0; i < base.points.a.size(); ++i) {
            PointCloud plus = base, minus = base;
            plus.points.a[i] += h;
            minus.points.a[i] -= h;
            double num = side == 0 ? (value_at(plus, y) - value_at(minus, y)) / (2 * h)
                                   : (value_at(x, plus) - value_at(x, minus)) / (2 * h);
            double ana = grad.a[i];
            INFO("side=", side, " i=", i, " analytic=", ana, " numeric=", num);
            CHECK(std::fabs(ana - num) <= 1e-3 * std::max(std::fabs(ana), std::fabs(num)) +
                                              1e-6 * gscale + 1e-9);
        }
    }
}

}  // namespace

TEST_CASE("cost matrix is half squared euclidean distance") {
    PointCloud x = cloud1d({0.0});
    PointCloud y = cloud1d({2.0});
    Mat c = cost_matrix(x, y);
    CHECK(c(0, 0) == 2.0);

    PointCloud same = cloud1d({1.5});
    CHECK(cost_matrix(same, same)(0, 0) == 0.0);

    std::mt19937_64 rng(3);
    PointCloud a = cloud_from_rows(randm(4, 3, rng));
    PointCloud b = cloud_from_rows(randm(6, 3, rng));
    Mat ab = cost_matrix(a, b);
    Mat ba = cost_matrix(b, a);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) {
            CHECK(ab(i, j) == ba(j, i));
            CHECK(ab(i, j) >= 0.0);
        }

    PointCloud wrong = cloud_from_rows(randm(4, 2, rng));
    CHECK_THROWS_AS((void)cost_matrix(a, wrong), DimensionMismatch);
}

TEST_CASE("cloud and config validation") {
    PointCloud c = cloud1d({0.0, 1.0});
    CHECK(c.weights == std::vector<double>{0.5, 0.5});
    c.weights = {0.9, 0.2};
    CHECK_THROWS_AS(validate(c), InvalidInput);

    SinkhornConfig cfg;
    validate(cfg);
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(validate(cfg), InvalidInput);
    cfg = {};
    cfg.scaling = 1.0;
    CHECK_THROWS_AS(validate(cfg), InvalidInput);
    cfg = {};
    cfg.tol = -1.0;
    CHECK_THROWS_AS(validate(cfg), InvalidInput);
    cfg = {};
    cfg.max_iters = 0;
    CHECK_THROWS_AS(validate(cfg), InvalidInput);
}

TEST_CASE("entropic transport on single points is the plain cost") {
    SinkhornConfig cfg;
    PointCloud a = cloud1d({0.25});
    SinkhornResult self = ot_eps(a, a, cfg);
    CHECK(self.converged);
    CHECK(std::fabs(self.value) <= 1e-12);

    // The plan between two singletons is forced for every blur.
    PointCloud b = cloud1d({-1.75});
    for (double blur : {1.0, 0.1, 0.003}) {
        SinkhornConfig abs_cfg = cfg;
        abs_cfg.epsilon = blur;
        abs_cfg.relative_epsilon = false;
        SinkhornResult r = ot_eps(a, b, abs_cfg);
        CHECK(std::fabs(r.value - 0.5 * 2.0 * 2.0) <= 1e-9);
    }
}

TEST_CASE("entropic transport approaches the exact oracle at small blur") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        PointCloud x = cloud_from_rows(randm(3, 2, rng));
        PointCloud y = cloud_from_rows(randm(3, 2, rng));
        double d2 = sq_diam(x, y);
        SinkhornConfig cfg;
        cfg.epsilon = 1e-3;  // relative to the squared diameter
        cfg.max_iters = 2000;
        SinkhornResult r = ot_eps(x, y, cfg);
        double exact = exact_ot_oracle(x, y);
        INFO("trial=", trial, " entropic=", r.value, " exact=", exact);
        CHECK(r.converged);
        // The dual value includes the entropic penalty, so it sits
        // above the exact cost by at most eps*log(3) (the penalty of a
        // permutation plan against the uniform product measure): a
        // two-sided bracket of width ~1.0986*eps, checked with slack.
        CHECK(r.value - exact >= -1e-9);
        CHECK(r.value - exact <= 1.2e-3 * d2);
    }
}

TEST_CASE("divergence of a cloud with itself vanishes") {
    std::mt19937_64 rng(17);
    SinkhornConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        PointCloud x = cloud_from_rows(randm(2 + trial % 6, 3, rng));
        SinkhornResult r = sinkhorn_divergence(x, x, cfg);
        CHECK(r.converged);
        CHECK(std::fabs(r.value) <= 1e-6);
    }
}

TEST_CASE("divergence between single points is exactly the cost") {
    SinkhornConfig cfg;
    Mat pa(1, 2);
    pa(0, 0) = 0.3;
    pa(0, 1) = -1.0;
    Mat pb(1, 2);
    pb(0, 0) = -0.7;
    pb(0, 1) = 0.5;
    PointCloud a = cloud_from_rows(pa);
    PointCloud b = cloud_from_rows(pb);
    double expect = 0.5 * (1.0 * 1.0 + 1.5 * 1.5);
    SinkhornResult r = sinkhorn_divergence(a, b, cfg);
    CHECK(std::fabs(r.value - expect) <= 1e-9);
}

TEST_CASE("two-point divergence at small blur picks the cheaper matching") {
    Mat xs(2, 2);
    xs(0, 0) = 0.0; xs(0, 1) = 0.0;
    xs(1, 0) = 1.0; xs(1, 1) = 0.0;
    Mat ys(2, 2);
    ys(0, 0) = 1.1; ys(0, 1) = 0.2;
    ys(1, 0) = -0.3; ys(1, 1) = 0.1;
    PointCloud x = cloud_from_rows(xs);
    PointCloud y = cloud_from_rows(ys);

    // Both matchings written out by hand; the identity pairing is the
    // expensive one here.
    double straight = 0.5 * ((1.1 * 1.1 + 0.2 * 0.2) + (1.3 * 1.3 + 0.1 * 0.1)) / 2.0;
    double crossed = 0.5 * ((0.3 * 0.3 + 0.1 * 0.1) + (0.1 * 0.1 + 0.2 * 0.2)) / 2.0;
    double best = std::min(straight, crossed);
    CHECK(std::fabs(exact_ot_oracle(x, y) - best) <= 1e-12);

    SinkhornConfig cfg;
    cfg.epsilon = 1e-3;
    cfg.max_iters = 2000;
    SinkhornResult r = sinkhorn_divergence(x, y, cfg);
    CHECK(std::fabs(r.value - best) <= 1e-3);
}

TEST_CASE("oracle handles trivial and unequal-size cases") {
    PointCloud a = cloud1d({0.0});
    PointCloud b = cloud1d({3.0});
    CHECK(exact_ot_oracle(a, a) == 0.0);
    CHECK(std::fabs(exact_ot_oracle(a, b) - 4.5) <= 1e-12);

    // 1 vs 2 points: everything must split evenly to the two targets.
    PointCloud one = cloud1d({0.0});
    PointCloud two = cloud1d({1.0, -1.0});
    CHECK(std::fabs(exact_ot_oracle(one, two) - 0.5) <= 1e-12);

    // 2 vs 3 points in 1-D, solvable by hand: lcm mass units of 1/6.
    PointCloud left = cloud1d({0.0, 4.0});
    PointCloud right = cloud1d({0.0, 2.0, 4.0});
    // Optimal: each endpoint keeps 2/6 in place and sends 1/6 to the
    // middle, costing 2 * (1/6) * (0.5 * 4) = 2/3.
    CHECK(std::fabs(exact_ot_oracle(left, right) - 2.0 / 3.0) <= 1e-12);

    std::mt19937_64 rng(23);
    PointCloud big = cloud_from_rows(randm(9, 2, rng));
    CHECK_THROWS_AS((void)exact_ot_oracle(big, big), TooLarge);
    PointCloud skew = cloud_from_rows(randm(3, 2, rng));
    skew.weights = {0.2, 0.3, 0.5};
    CHECK_THROWS_AS((void)exact_ot_oracle(skew, skew), InvalidInput);
}

TEST_CASE("unequal-size oracle agrees with a replicated equal-size instance") {
    // Duplicating each of 2 points twice turns a 2-vs-4 problem into a
    // 4-vs-4 problem with the same optimal cost.
    std::mt19937_64 rng(29);
    Mat xs = randm(2, 2, rng);
    Mat dup(4, 2);
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 2; ++k) dup(i, k) = xs(i / 2, k);
    Mat ys = randm(4, 2, rng);
    PointCloud small = cloud_from_rows(xs);
    PointCloud doubled = cloud_from_rows(dup);
    PointCloud target = cloud_from_rows(ys);
    CHECK(std::fabs(exact_ot_oracle(small, target) - exact_ot_oracle(doubled, target)) <= 1e-12);
}

TEST_CASE("divergence is non-negative, symmetric and translation invariant") {
    std::mt19937_64 rng(31);
    SinkhornConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        PointCloud x = cloud_from_rows(randm(4, 3, rng));
        PointCloud y = cloud_from_rows(randm(5, 3, rng));
        SinkhornResult xy = sinkhorn_divergence(x, y, cfg);
        SinkhornResult yx = sinkhorn_divergence(y, x, cfg);
        CHECK(xy.value >= -1e-6);
        CHECK(std::fabs(xy.value - yx.value) <= 1e-6);

        PointCloud xs = x, ys = y;
        for (int i = 0; i < xs.points.rows; ++i)
            for (int k = 0; k < 3; ++k) xs.points(i, k) += (k + 1) * 0.37;
        for (int j = 0; j < ys.points.rows; ++j)
            for (int k = 0; k < 3; ++k) ys.points(j, k) += (k + 1) * 0.37;
        SinkhornResult shifted = sinkhorn_divergence(xs, ys, cfg);
        CHECK(std::fabs(shifted.value - xy.value) <= 1e-6);
    }
}

TEST_CASE("divergence converges to the exact cost as the blur shrinks") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        PointCloud x = cloud_from_rows(randm(4, 2, rng));
        PointCloud y = cloud_from_rows(randm(4, 2, rng));
        double d2 = sq_diam(x, y);
        double exact = exact_ot_oracle(x, y);
        double prev_gap = 1e300;
        // Blurs below ~0.01 of the squared diameter contract too slowly
        // for a sane iteration budget; the grid stops above that.
        for (double rel : {0.5, 0.2, 0.08, 0.03, 0.012}) {
            SinkhornConfig cfg;
            cfg.epsilon = rel;
            cfg.max_iters = 3000;
            SinkhornResult r = sinkhorn_divergence(x, y, cfg);
            double gap = std::fabs(r.value - exact);
            INFO("trial=", trial, " rel=", rel, " S=", r.value, " exact=", exact);
            CHECK(r.converged);
            CHECK(gap <= prev_gap + 1e-9);
            CHECK(gap <= 3.0 * rel * d2);
            prev_gap = gap;
        }
    }
}

TEST_CASE("gradient of the single-point divergence is the displacement") {
    SinkhornConfig cfg;
    Mat pa(1, 3);
    pa(0, 0) = 0.2; pa(0, 1) = -0.4; pa(0, 2) = 1.0;
    Mat pb(1, 3);
    pb(0, 0) = -0.1; pb(0, 1) = 0.3; pb(0, 2) = 0.6;
    SinkhornGradResult r = sinkhorn_backward(cloud_from_rows(pa), cloud_from_rows(pb), cfg);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::fabs(r.dx(0, k) - (pa(0, k) - pb(0, k))) <= 1e-9);
        CHECK(std::fabs(r.dy(0, k) - (pb(0, k) - pa(0, k))) <= 1e-9);
    }
    // Upstream scaling multiplies straight through.
    SinkhornGradResult half =
        sinkhorn_backward(cloud_from_rows(pa), cloud_from_rows(pb), cfg, 0.5);
    for (int k = 0; k < 3; ++k) CHECK(std::fabs(half.dx(0, k) - 0.5 * r.dx(0, k)) <= 1e-12);
}

TEST_CASE("gradients match central finite differences") {
    std::mt19937_64 rng(41);
    PointCloud x = cloud_from_rows(randm(5, 3, rng));
    PointCloud y = cloud_from_rows(randm(5, 3, rng));
    check_gradients(x, y, fd_config(0.15));

    // Coincident clouds: the divergence is at a minimum, so both sides
    // should be near zero and agree.
    PointCloud z = cloud_from_rows(randm(4, 2, rng));
    SinkhornGradResult at_min = sinkhorn_backward(z, z, fd_config(0.1));
    for (double v : at_min.dx.a) CHECK(std::fabs(v) <= 1e-4);
    check_gradients(z, z, fd_config(0.1));
}

TEST_CASE("unequal sizes and unequal weights still differentiate cleanly") {
    std::mt19937_64 rng(43);
    PointCloud x = cloud_from_rows(randm(3, 2, rng));
    PointCloud y = cloud_from_rows(randm(6, 2, rng));
    check_gradients(x, y, fd_config(0.2));
}
