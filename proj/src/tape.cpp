#include "sat/tape.hpp"

#include <cassert>
#include <cmath>
#include <numbers>

#include "sat/errors.hpp"

namespace sat {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeMismatch(msg);
}

}  // namespace

int Tape::push(Mat val, bool needs, std::function<void(Tape&)> back) {
    assert(val.all_finite() && "non-finite value produced on tape");
    nodes_.push_back(Node{std::move(val), std::move(back), nullptr, needs});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::gbuf(int id) {
    Mat& g = grads_[id];
    if (g.a.empty()) g = Mat::zeros_like(nodes_[id].val);
    return g;
}

void Tape::check_same_tape(Var a) const {
    if (a.tape != this || a.id < 0 || a.id >= static_cast<int>(nodes_.size()))
        throw ShapeMismatch("var does not belong to this tape");
}

Var Tape::leaf(Mat value) {
    int id = push(std::move(value), false, nullptr);
    return Var{this, id};
}

Var Tape::param(const Mat& value, Mat* grad_sink) {
    int id = push(value, true, nullptr);
    nodes_[id].sink = grad_sink;
    return Var{this, id};
}

Var Tape::add(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Mat& A = val(a.id);
    const Mat& B = val(b.id);
    require(A.same_shape(B), "add: shape mismatch");
    Mat out = A;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += B.a[i];
    int ai = a.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
        }
        if (t.nodes_[bi].needs) {
            Mat& gb = t.gbuf(bi);
            for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] += g.a[i];
        }
    };
    return Var{this, id};
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Mat& A = val(a.id);
    const Mat& B = val(b.id);
    require(A.same_shape(B), "sub: shape mismatch");
    Mat out = A;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= B.a[i];
    int ai = a.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
        }
        if (t.nodes_[bi].needs) {
            Mat& gb = t.gbuf(bi);
            for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] -= g.a[i];
        }
    };
    return Var{this, id};
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Mat& A = val(a.id);
    const Mat& B = val(b.id);
    require(A.same_shape(B), "mul: shape mismatch");
    Mat out = A;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] *= B.a[i];
    int ai = a.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        const Mat& A2 = t.val(ai);
        const Mat& B2 = t.val(bi);
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i] * B2.a[i];
        }
        if (t.nodes_[bi].needs) {
            Mat& gb = t.gbuf(bi);
            for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] += g.a[i] * A2.a[i];
        }
    };
    return Var{this, id};
}

Var Tape::scale(Var a, double c) {
    check_same_tape(a);
    Mat out = val(a.id);
    for (double& v : out.a) v *= c;
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, c, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        Mat& ga = t.gbuf(ai);
        for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += c * g.a[i];
    };
    return Var{this, id};
}

Var Tape::add_scalar(Var a, double c) {
    check_same_tape(a);
    Mat out = val(a.id);
    for (double& v : out.a) v += c;
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        Mat& ga = t.gbuf(ai);
        for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
    };
    return Var{this, id};
}

Var Tape::affine_scalar(Var a, Var w, Var b) {
    check_same_tape(a);
    check_same_tape(w);
    check_same_tape(b);
    require(val(w.id).size() == 1 && val(b.id).size() == 1, "affine_scalar: w and b must be 1x1");
    double wv = val(w.id).a[0];
    double bv = val(b.id).a[0];
    Mat out = val(a.id);
    for (double& v : out.a) v = wv * v + bv;
    int ai = a.id, wi = w.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(w) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, wi, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        const Mat& A2 = t.val(ai);
        double wv2 = t.val(wi).a[0];
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += wv2 * g.a[i];
        }
        if (t.nodes_[wi].needs) {
            double s = 0.0;
            for (size_t i = 0; i < g.a.size(); ++i) s += g.a[i] * A2.a[i];
            t.gbuf(wi).a[0] += s;
        }
        if (t.nodes_[bi].needs) {
            double s = 0.0;
            for (size_t i = 0; i < g.a.size(); ++i) s += g.a[i];
            t.gbuf(bi).a[0] += s;
        }
    };
    return Var{this, id};
}

namespace {

// C += op(A) * op(B), plain triple loop; sizes here are tiny.
void gemm_acc(bool ta, bool tb, const Mat& A, const Mat& B, Mat& C) {
    int m = ta ? A.cols : A.rows;
    int k = ta ? A.rows : A.cols;
    int n = tb ? B.rows : B.cols;
    assert((tb ? B.cols : B.rows) == k);
    assert(C.rows == m && C.cols == n);
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            double av = ta ? A(l, i) : A(i, l);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                double bv = tb ? B(j, l) : B(l, j);
                C(i, j) += av * bv;
            }
        }
    }
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Mat& A = val(a.id);
    const Mat& B = val(b.id);
    require(A.cols == B.rows, "matmul: inner dimension mismatch");
    Mat out(A.rows, B.cols);
    gemm_acc(false, false, A, B, out);
    int ai = a.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) gemm_acc(false, true, g, t.val(bi), t.gbuf(ai));   // dA += G B^T
        if (t.nodes_[bi].needs) gemm_acc(true, false, t.val(ai), g, t.gbuf(bi));   // dB += A^T G
    };
    return Var{this, id};
}

Var Tape::matmul_nt(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Mat& A = val(a.id);
    const Mat& B = val(b.id);
    require(A.cols == B.cols, "matmul_nt: column dimension mismatch");
    Mat out(A.rows, B.rows);
    gemm_acc(false, true, A, B, out);
    int ai = a.id, bi = b.id;
    int id = push(std::move(out), needs(a) || needs(b), nullptr);
    int self = id;
    nodes_[id].back = [ai, bi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) gemm_acc(false, false, g, t.val(bi), t.gbuf(ai));  // dA += G B
        if (t.nodes_[bi].needs) gemm_acc(true, false, g, t.val(ai), t.gbuf(bi));   // dB += G^T A
    };
    return Var{this, id};
}

Var Tape::transpose(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    Mat out(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
    };
    return Var{this, id};
}

Var Tape::pairwise_half_sqdist(Var x, Var y) {
    check_same_tape(x);
    check_same_tape(y);
    const Mat& X = val(x.id);
    const Mat& Y = val(y.id);
    require(X.cols == Y.cols, "pairwise_half_sqdist: coordinate dimension mismatch");
    Mat out(X.rows, Y.rows);
    for (int i = 0; i < X.rows; ++i)
        for (int j = 0; j < Y.rows; ++j) {
            double s = 0.0;
            for (int k = 0; k < X.cols; ++k) {
                double d = X(i, k) - Y(j, k);
                s += d * d;
            }
            out(i, j) = 0.5 * s;
        }
    int xi = x.id, yi = y.id;
    int id = push(std::move(out), needs(x) || needs(y), nullptr);
    int self = id;
    nodes_[id].back = [xi, yi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        const Mat& X2 = t.val(xi);
        const Mat& Y2 = t.val(yi);
        bool nx = t.nodes_[xi].needs;
        bool ny = t.nodes_[yi].needs;
        if (!nx && !ny) return;
        for (int i = 0; i < X2.rows; ++i)
            for (int j = 0; j < Y2.rows; ++j) {
                double gij = g(i, j);
                if (gij == 0.0) continue;
                for (int k = 0; k < X2.cols; ++k) {
                    double d = X2(i, k) - Y2(j, k);
                    if (nx) t.gbuf(xi)(i, k) += gij * d;
                    if (ny) t.gbuf(yi)(j, k) -= gij * d;
                }
            }
    };
    return Var{this, id};
}

Var Tape::add_rowvec(Var a, Var v) {
    check_same_tape(a);
    check_same_tape(v);
    const Mat& A = val(a.id);
    const Mat& V = val(v.id);
    require(V.size() == A.cols, "add_rowvec: length must equal cols");
    Mat out = A;
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) out(i, j) += V.a[j];
    int ai = a.id, vi = v.id;
    int id = push(std::move(out), needs(a) || needs(v), nullptr);
    int self = id;
    nodes_[id].back = [ai, vi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
        }
        if (t.nodes_[vi].needs) {
            Mat& gv = t.gbuf(vi);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) gv.a[j] += g(i, j);
        }
    };
    return Var{this, id};
}

Var Tape::add_colvec(Var a, Var v) {
    check_same_tape(a);
    check_same_tape(v);
    const Mat& A = val(a.id);
    const Mat& V = val(v.id);
    require(V.size() == A.rows, "add_colvec: length must equal rows");
    Mat out = A;
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) out(i, j) += V.a[i];
    int ai = a.id, vi = v.id;
    int id = push(std::move(out), needs(a) || needs(v), nullptr);
    int self = id;
    nodes_[id].back = [ai, vi, self](Tape& t) {
        const Mat& g = t.grads_[self];
        if (t.nodes_[ai].needs) {
            Mat& ga = t.gbuf(ai);
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
        }
        if (t.nodes_[vi].needs) {
            Mat& gv = t.gbuf(vi);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) gv.a[i] += g(i, j);
        }
    };
    return Var{this, id};
}

Var Tape::row_sumsq(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    Mat out(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
        out(i, 0) = s;
    }
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        const Mat& A2 = t.val(ai);
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < A2.rows; ++i)
            for (int j = 0; j < A2.cols; ++j) ga(i, j) += 2.0 * A2(i, j) * g(i, 0);
    };
    return Var{this, id};
}

Var Tape::logsumexp_rows(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    Mat out(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        double mx = A(i, 0);
        for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += std::exp(A(i, j) - mx);
        out(i, 0) = mx + std::log(s);
    }
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        const Mat& A2 = t.val(ai);
        const Mat& out2 = t.val(self);
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < A2.rows; ++i)
            for (int j = 0; j < A2.cols; ++j)
                ga(i, j) += g(i, 0) * std::exp(A2(i, j) - out2(i, 0));
    };
    return Var{this, id};
}

Var Tape::softmax_rows(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    Mat out(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        double mx = A(i, 0);
        for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) {
            out(i, j) = std::exp(A(i, j) - mx);
            s += out(i, j);
        }
        for (int j = 0; j < A.cols; ++j) out(i, j) /= s;
    }
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        const Mat& y = t.val(self);
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < y.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
            for (int j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
    };
    return Var{this, id};
}

Var Tape::gelu(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    Mat out = A;
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (double& v : out.a) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        const Mat& A2 = t.val(ai);
        Mat& ga = t.gbuf(ai);
        constexpr double c = 0.7071067811865475244;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (size_t i = 0; i < g.a.size(); ++i) {
            double x = A2.a[i];
            double d = 0.5 * (1.0 + std::erf(x * c)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga.a[i] += g.a[i] * d;
        }
    };
    return Var{this, id};
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    check_same_tape(x);
    check_same_tape(gain);
    check_same_tape(bias);
    const Mat& X = val(x.id);
    const Mat& G = val(gain.id);
    const Mat& B = val(bias.id);
    require(G.size() == X.cols && B.size() == X.cols, "layer_norm: gain/bias length");
    Mat out(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < X.cols; ++j) mu += X(i, j);
        mu /= X.cols;
        double var = 0.0;
        for (int j = 0; j < X.cols; ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
        var /= X.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < X.cols; ++j) out(i, j) = (X(i, j) - mu) * inv * G.a[j] + B.a[j];
    }
    int xi = x.id, gi = gain.id, bi = bias.id;
    int id = push(std::move(out), needs(x) || needs(gain) || needs(bias), nullptr);
    int self = id;
    nodes_[id].back = [xi, gi, bi, eps, self](Tape& t) {
        const Mat& g = t.grads_[self];
        const Mat& X2 = t.val(xi);
        const Mat& G2 = t.val(gi);
        int C = X2.cols;
        for (int i = 0; i < X2.rows; ++i) {
            double mu = 0.0;
            for (int j = 0; j < C; ++j) mu += X2(i, j);
            mu /= C;
            double var = 0.0;
            for (int j = 0; j < C; ++j) var += (X2(i, j) - mu) * (X2(i, j) - mu);
            var /= C;
            double inv = 1.0 / std::sqrt(var + eps);
            // xhat_j and the two row means needed by the input gradient.
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int j = 0; j < C; ++j) {
                double xh = (X2(i, j) - mu) * inv;
                double dxh = g(i, j) * G2.a[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh;
            }
            mean_dxh /= C;
            mean_dxh_xh /= C;
            if (t.nodes_[xi].needs) {
                Mat& gx = t.gbuf(xi);
                for (int j = 0; j < C; ++j) {
                    double xh = (X2(i, j) - mu) * inv;
                    double dxh = g(i, j) * G2.a[j];
                    gx(i, j) += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            if (t.nodes_[gi].needs) {
                Mat& gg = t.gbuf(gi);
                for (int j = 0; j < C; ++j) gg.a[j] += g(i, j) * (X2(i, j) - mu) * inv;
            }
            if (t.nodes_[bi].needs) {
                Mat& gb = t.gbuf(bi);
                for (int j = 0; j < C; ++j) gb.a[j] += g(i, j);
            }
        }
    };
    return Var{this, id};
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
    check_same_tape(table);
    const Mat& T = val(table.id);
    Mat out(static_cast<int>(ids.size()), T.cols);
    for (size_t k = 0; k < ids.size(); ++k) {
        require(ids[k] >= 0 && ids[k] < T.rows, "gather_rows: id out of range");
        for (int j = 0; j < T.cols; ++j) out(static_cast<int>(k), j) = T(ids[k], j);
    }
    int ti = table.id;
    int id = push(std::move(out), needs(table), nullptr);
    int self = id;
    nodes_[id].back = [ti, ids = std::move(ids), self](Tape& t) {
        if (!t.nodes_[ti].needs) return;
        const Mat& g = t.grads_[self];
        Mat& gt = t.gbuf(ti);
        for (size_t k = 0; k < ids.size(); ++k)
            for (int j = 0; j < g.cols; ++j) gt(ids[k], j) += g(static_cast<int>(k), j);
    };
    return Var{this, id};
}

Var Tape::slice_block(Var a, int r0, int r1, int c0, int c1) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    require(0 <= r0 && r0 <= r1 && r1 <= A.rows && 0 <= c0 && c0 <= c1 && c1 <= A.cols,
            "slice_block: bounds");
    Mat out(r1 - r0, c1 - c0);
    for (int i = r0; i < r1; ++i)
        for (int j = c0; j < c1; ++j) out(i - r0, j - c0) = A(i, j);
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, r0, c0, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(i + r0, j + c0) += g(i, j);
    };
    return Var{this, id};
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Mat& A = val(a.id);
    return slice_block(a, 0, A.rows, c0, c1);
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    int rows = val(parts[0].id).rows;
    int cols = 0;
    bool any_needs = false;
    for (Var p : parts) {
        check_same_tape(p);
        require(val(p.id).rows == rows, "concat_cols: row mismatch");
        cols += val(p.id).cols;
        any_needs = any_needs || needs(p);
    }
    Mat out(rows, cols);
    std::vector<int> ids;
    std::vector<int> offs;
    int off = 0;
    for (Var p : parts) {
        const Mat& P = val(p.id);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < P.cols; ++j) out(i, off + j) = P(i, j);
        ids.push_back(p.id);
        offs.push_back(off);
        off += P.cols;
    }
    int id = push(std::move(out), any_needs, nullptr);
    int self = id;
    nodes_[id].back = [ids = std::move(ids), offs = std::move(offs), self](Tape& t) {
        const Mat& g = t.grads_[self];
        for (size_t k = 0; k < ids.size(); ++k) {
            if (!t.nodes_[ids[k]].needs) continue;
            Mat& gp = t.gbuf(ids[k]);
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp(i, j) += g(i, offs[k] + j);
        }
    };
    return Var{this, id};
}

Var Tape::pick_cols(Var a, std::vector<int> idx) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    require(static_cast<int>(idx.size()) == A.rows, "pick_cols: one index per row");
    Mat out(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        require(idx[i] >= 0 && idx[i] < A.cols, "pick_cols: index out of range");
        out(i, 0) = A(i, idx[i]);
    }
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, idx = std::move(idx), self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        const Mat& g = t.grads_[self];
        Mat& ga = t.gbuf(ai);
        for (int i = 0; i < g.rows; ++i) ga(i, idx[i]) += g(i, 0);
    };
    return Var{this, id};
}

Var Tape::dot_const(Var v, std::vector<double> w) {
    check_same_tape(v);
    const Mat& V = val(v.id);
    require(static_cast<int>(w.size()) == V.size(), "dot_const: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < w.size(); ++i) s += w[i] * V.a[i];
    Mat out(1, 1);
    out.a[0] = s;
    int vi = v.id;
    int id = push(std::move(out), needs(v), nullptr);
    int self = id;
    nodes_[id].back = [vi, w = std::move(w), self](Tape& t) {
        if (!t.nodes_[vi].needs) return;
        double g = t.grads_[self].a[0];
        Mat& gv = t.gbuf(vi);
        for (size_t i = 0; i < w.size(); ++i) gv.a[i] += g * w[i];
    };
    return Var{this, id};
}

Var Tape::sum(Var a) {
    check_same_tape(a);
    const Mat& A = val(a.id);
    double s = 0.0;
    for (double v : A.a) s += v;
    Mat out(1, 1);
    out.a[0] = s;
    int ai = a.id;
    int id = push(std::move(out), needs(a), nullptr);
    int self = id;
    nodes_[id].back = [ai, self](Tape& t) {
        if (!t.nodes_[ai].needs) return;
        double g = t.grads_[self].a[0];
        Mat& ga = t.gbuf(ai);
        for (double& v : ga.a) v += g;
    };
    return Var{this, id};
}

void Tape::backward(Var out) {
    check_same_tape(out);
    if (val(out.id).size() != 1) throw ShapeMismatch("backward: output must be 1x1");
    for (Mat& g : grads_) g = Mat();
    gbuf(out.id).a[0] = 1.0;
    for (int id = out.id; id >= 0; --id) {
        if (!has_grad(id) || !nodes_[id].needs) continue;
        if (nodes_[id].back) nodes_[id].back(*this);
    }
    for (size_t id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        if (n.sink != nullptr && has_grad(static_cast<int>(id))) {
            const Mat& g = grads_[id];
            if (n.sink->a.empty()) *n.sink = Mat(g.rows, g.cols);
            for (size_t i = 0; i < g.a.size(); ++i) n.sink->a[i] += g.a[i];
        }
    }
}

}  // namespace sat
