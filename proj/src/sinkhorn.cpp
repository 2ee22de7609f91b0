#include "sat/sinkhorn.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>

#include "sat/errors.hpp"

namespace sat {

PointCloud cloud_from_rows(Mat points) {
    int m = points.rows;
    if (m == 0) throw InvalidInput("point cloud needs at least one point");
    std::vector<double> w(static_cast<size_t>(m), 1.0 / m);
    return {std::move(points), std::move(w)};
}

void validate(const PointCloud& cloud) {
    if (cloud.points.rows == 0 || cloud.points.cols == 0)
        throw InvalidInput("point cloud needs at least one point and one coordinate");
    if (static_cast<int>(cloud.weights.size()) != cloud.points.rows)
        throw DimensionMismatch("one weight per point required");
    if (!cloud.points.all_finite()) throw InvalidInput("coordinates must be finite");
    double total = 0.0;
    for (double w : cloud.weights) {
        if (!(w >= 0.0)) throw InvalidInput("weights must be non-negative");
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw InvalidInput("weights must sum to 1");
}

void validate(const SinkhornConfig& cfg) {
    if (!(cfg.epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
    if (!(cfg.scaling > 0.0 && cfg.scaling < 1.0))
        throw InvalidInput("scaling must lie strictly between 0 and 1");
    if (cfg.max_iters < 1) throw InvalidInput("max_iters must be positive");
    if (!(cfg.tol > 0.0)) throw InvalidInput("tol must be positive");
}

Mat cost_matrix(const PointCloud& x, const PointCloud& y) {
    validate(x);
    validate(y);
    if (x.points.cols != y.points.cols)
        throw DimensionMismatch("clouds must share the coordinate dimension");
    Mat c(x.points.rows, y.points.rows);
    for (int i = 0; i < x.points.rows; ++i)
        for (int j = 0; j < y.points.rows; ++j) {
            double s = 0.0;
            for (int k = 0; k < x.points.cols; ++k) {
                double d = x.points(i, k) - y.points(j, k);
                s += d * d;
            }
            c(i, j) = 0.5 * s;
        }
    return c;
}

namespace {

std::vector<double> check_weights(const std::vector<double>& w, int rows, const char* side) {
    if (static_cast<int>(w.size()) != rows)
        throw DimensionMismatch(std::string(side) + ": one weight per point required");
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (std::fabs(total - 1.0) > 1e-9)
        throw InvalidInput(std::string(side) + ": weights must sum to 1");
    return w;
}

// log weights kept finite: zero-weight points get a floor that
// underflows to zero inside the softmin exponential.
Mat log_row(const std::vector<double>& w) {
    Mat m(1, static_cast<int>(w.size()));
    for (size_t i = 0; i < w.size(); ++i)
        m.a[i] = w[i] > 0.0 ? std::log(w[i]) : -745.0;
    return m;
}

// Squared diameter of the union of both point sets.
double joint_sq_diameter(const Mat& a, const Mat& b) {
    auto scan = [](const Mat& p, const Mat& q, double best) {
        for (int i = 0; i < p.rows; ++i)
            for (int j = 0; j < q.rows; ++j) {
                double s = 0.0;
                for (int k = 0; k < p.cols; ++k) {
                    double d = p(i, k) - q(j, k);
                    s += d * d;
                }
                best = std::max(best, s);
            }
        return best;
    };
    double best = scan(a, a, 0.0);
    best = scan(b, b, best);
    return scan(a, b, best);
}

struct Solver {
    Tape& t;
    double eps = 0.0;                  // final blur
    std::vector<double> stages;        // pre-final blur values, largest first
    double tol = 0.0;
    int max_iters = 0;

    Solver(Tape& tape, const SinkhornConfig& cfg, double sq_diam) : t(tape) {
        eps = cfg.relative_epsilon ? std::max(cfg.epsilon * sq_diam, 1e-12) : cfg.epsilon;
        tol = cfg.tol;
        max_iters = cfg.max_iters;
        for (double v = sq_diam; v > eps; v *= cfg.scaling) stages.push_back(v);
    }

    // One softmin sweep: row i of the result is
    //   -blur * log sum_j exp(logv_j + (pot_j - C_ij)/blur).
    Var softmin(Var c, Var pot, const Mat& logv, double blur) const {
        Var row = t.add(t.scale(t.transpose(pot), 1.0 / blur), t.leaf(logv));
        Var arg = t.add_rowvec(t.scale(c, -1.0 / blur), row);
        return t.scale(t.logsumexp_rows(arg), -blur);
    }

    // Symmetric fixed point p = T(p) for one cloud against itself,
    // via damped updates p <- (p + T(p))/2 along the blur schedule.
    // Solved below the caller tolerance so that the cross solve's warm
    // start leaves nearly nothing to cancel in the debiased value.
    Var symmetric(Var cxx, const Mat& logw, int m, double sym_tol, int& iters,
                  bool& converged) const {
        Var p = t.leaf(Mat(m, 1, 0.0));
        int used = 0;
        converged = false;
        for (double blur : stages) {
            if (used >= max_iters) break;
            p = t.scale(t.add(p, softmin(cxx, p, logw, blur)), 0.5);
            ++used;
        }
        while (used < max_iters) {
            Var pn = t.scale(t.add(p, softmin(cxx, p, logw, eps)), 0.5);
            ++used;
            double change = sup_diff(t.value(pn), t.value(p));
            p = pn;
            if (change <= sym_tol) {
                converged = true;
                break;
            }
        }
        iters += used;
        return p;
    }

    // Alternating updates for the cross problem from a warm start.
    std::pair<Var, Var> cross(Var cxy, Var cyx, Var f0, Var g0, const Mat& logw,
                              const Mat& logv, int& iters, bool& converged) const {
        Var f = f0;
        Var g = g0;
        int used = 0;
        converged = false;
        while (used < max_iters) {
            Var fn = softmin(cxy, g, logv, eps);
            Var gn = softmin(cyx, fn, logw, eps);
            ++used;
            double change = std::max(sup_diff(t.value(fn), t.value(f)),
                                     sup_diff(t.value(gn), t.value(g)));
            f = fn;
            g = gn;
            if (change <= tol) {
                converged = true;
                break;
            }
        }
        iters += used;
        return {f, g};
    }
};

std::vector<double> column(const Mat& m) {
    return m.a;
}

}  // namespace

SinkhornResult ot_eps(const PointCloud& x, const PointCloud& y, const SinkhornConfig& cfg) {
    validate(x);
    validate(y);
    validate(cfg);
    if (x.points.cols != y.points.cols)
        throw DimensionMismatch("clouds must share the coordinate dimension");

    Tape t;
    Var xv = t.leaf(x.points);
    Var yv = t.leaf(y.points);
    Solver solver(t, cfg, joint_sq_diameter(x.points, y.points));
    Mat logw = log_row(x.weights);
    Mat logv = log_row(y.weights);

    Var cxy = t.pairwise_half_sqdist(xv, yv);
    Var cyx = t.transpose(cxy);
    Var f = t.leaf(Mat(x.points.rows, 1, 0.0));
    Var g = t.leaf(Mat(y.points.rows, 1, 0.0));

    SinkhornResult res;
    // Blur schedule: one alternation per stage, then refine.
    for (double blur : solver.stages) {
        if (res.iters >= cfg.max_iters) break;
        f = solver.softmin(cxy, g, logv, blur);
        g = solver.softmin(cyx, f, logw, blur);
        ++res.iters;
    }
    while (res.iters < cfg.max_iters) {
        Var fn = solver.softmin(cxy, g, logv, solver.eps);
        Var gn = solver.softmin(cyx, fn, logw, solver.eps);
        ++res.iters;
        double change = std::max(sup_diff(t.value(fn), t.value(f)),
                                 sup_diff(t.value(gn), t.value(g)));
        f = fn;
        g = gn;
        if (change <= cfg.tol) {
            res.converged = true;
            break;
        }
    }
    Var value = t.add(t.dot_const(f, x.weights), t.dot_const(g, y.weights));
    res.value = t.value(value).a[0];
    res.f = column(t.value(f));
    res.g = column(t.value(g));
    return res;
}

SinkhornVarResult sinkhorn_divergence_var(Tape& t, Var x, Var y, const std::vector<double>& wx,
                                          const std::vector<double>& wy,
                                          const SinkhornConfig& cfg) {
    validate(cfg);
    // Snapshot shapes and the diameter up front: value() references
    // into the tape go stale as soon as new nodes are pushed.
    int m = t.value(x).rows;
    int n = t.value(y).rows;
    if (t.value(x).cols != t.value(y).cols)
        throw DimensionMismatch("clouds must share the coordinate dimension");
    std::vector<double> w = check_weights(wx, m, "x");
    std::vector<double> v = check_weights(wy, n, "y");
    double d2 = joint_sq_diameter(t.value(x), t.value(y));

    Solver solver(t, cfg, d2);
    Mat logw = log_row(w);
    Mat logv = log_row(v);

    Var cxy = t.pairwise_half_sqdist(x, y);
    Var cxx = t.pairwise_half_sqdist(x, x);
    Var cyy = t.pairwise_half_sqdist(y, y);
    Var cyx = t.transpose(cxy);

    SinkhornVarResult res;
    bool ca = false, cb = false, cc = false;
    double sym_tol = cfg.tol / 8.0;
    Var pa = solver.symmetric(cxx, logw, m, sym_tol, res.iters, ca);
    Var pb = solver.symmetric(cyy, logv, n, sym_tol, res.iters, cb);
    auto [f, g] = solver.cross(cxy, cyx, pa, pb, logw, logv, res.iters, cc);

    // S = <w, f - p_a> + <v, g - p_b>; written this way the self terms
    // cancel exactly instead of by subtraction of two large numbers.
    res.value = t.add(t.dot_const(t.sub(f, pa), w), t.dot_const(t.sub(g, pb), v));
    res.converged = ca && cb && cc;
    return res;
}

SinkhornResult sinkhorn_divergence(const PointCloud& x, const PointCloud& y,
                                   const SinkhornConfig& cfg) {
    validate(x);
    validate(y);
    Tape t;
    Var xv = t.leaf(x.points);
    Var yv = t.leaf(y.points);
    SinkhornVarResult var = sinkhorn_divergence_var(t, xv, yv, x.weights, y.weights, cfg);
    SinkhornResult res;
    res.value = t.value(var.value).a[0];
    res.iters = var.iters;
    res.converged = var.converged;
    return res;
}

SinkhornGradResult sinkhorn_backward(const PointCloud& x, const PointCloud& y,
                                     const SinkhornConfig& cfg, double upstream) {
    validate(x);
    validate(y);
    Tape t;
    SinkhornGradResult out;
    Var xv = t.param(x.points, &out.dx);
    Var yv = t.param(y.points, &out.dy);
    SinkhornVarResult var = sinkhorn_divergence_var(t, xv, yv, x.weights, y.weights, cfg);
    out.value = t.value(var.value).a[0];
    out.iters = var.iters;
    out.converged = var.converged;
    t.backward(t.scale(var.value, upstream));
    if (out.dx.a.empty()) out.dx = Mat::zeros_like(x.points);
    if (out.dy.a.empty()) out.dy = Mat::zeros_like(y.points);
    return out;
}

namespace {

// Min-cost flow by successive shortest paths; sizes here are tiny, so
// Bellman-Ford per augmentation is plenty.
struct FlowEdge {
    int to;
    int cap;
    double cost;
    int rev;
};

class FlowGraph {
public:
    explicit FlowGraph(int n) : adj_(n) {}

    void add(int u, int v, int cap, double cost) {
        adj_[u].push_back({v, cap, cost, static_cast<int>(adj_[v].size())});
        adj_[v].push_back({u, 0, -cost, static_cast<int>(adj_[u].size()) - 1});
    }

    double min_cost_max_flow(int s, int t) {
        double total = 0.0;
        while (true) {
            int n = static_cast<int>(adj_.size());
            std::vector<double> dist(n, 1e300);
            std::vector<int> pe(n, -1), pv(n, -1);
            dist[s] = 0.0;
            for (int round = 0; round < n; ++round) {
                bool moved = false;
                for (int u = 0; u < n; ++u) {
                    if (dist[u] >= 1e300) continue;
                    for (int e = 0; e < static_cast<int>(adj_[u].size()); ++e) {
                        const FlowEdge& ed = adj_[u][e];
                        if (ed.cap <= 0) continue;
                        double nd = dist[u] + ed.cost;
                        if (nd < dist[ed.to] - 1e-15) {
                            dist[ed.to] = nd;
                            pv[ed.to] = u;
                            pe[ed.to] = e;
                            moved = true;
                        }
                    }
                }
                if (!moved) break;
            }
            if (pe[t] == -1) return total;
            int push = INT_MAX;
            for (int v = t; v != s; v = pv[v]) push = std::min(push, edge(pv[v], pe[v]).cap);
            for (int v = t; v != s; v = pv[v]) {
                FlowEdge& ed = edge(pv[v], pe[v]);
                ed.cap -= push;
                adj_[ed.to][ed.rev].cap += push;
                total += push * ed.cost;
            }
        }
    }

private:
    std::vector<std::vector<FlowEdge>> adj_;
    FlowEdge& edge(int u, int e) { return adj_[u][e]; }
};

}  // namespace

double exact_ot_oracle(const PointCloud& x, const PointCloud& y) {
    validate(x);
    validate(y);
    int m = x.points.rows;
    int n = y.points.rows;
    if (m > 8 || n > 8) throw TooLarge("exact transport oracle handles at most 8 points per side");
    for (double w : x.weights)
        if (std::fabs(w - 1.0 / m) > 1e-12) throw InvalidInput("oracle requires uniform weights");
    for (double w : y.weights)
        if (std::fabs(w - 1.0 / n) > 1e-12) throw InvalidInput("oracle requires uniform weights");

    Mat c = cost_matrix(x, y);
    if (m == n) {
        std::vector<int> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e300;
        do {
            double cost = 0.0;
            for (int i = 0; i < m; ++i) cost += c(i, perm[i]);
            best = std::min(best, cost / m);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }

    int l = std::lcm(m, n);
    FlowGraph g(m + n + 2);
    int src = m + n;
    int dst = m + n + 1;
    for (int i = 0; i < m; ++i) g.add(src, i, l / m, 0.0);
    for (int j = 0; j < n; ++j) g.add(m + j, dst, l / n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g.add(i, m + j, l, c(i, j));
    return g.min_cost_max_flow(src, dst) / l;
}

}  // namespace sat
