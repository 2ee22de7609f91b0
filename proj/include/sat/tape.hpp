#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sat/matrix.hpp"

namespace sat {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid by default.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Eager reverse-mode tape over matrices. Each op computes its value on
// creation and records a closure that pushes the output gradient back to
// its parents. backward() replays closures in reverse creation order,
// which is a valid topological order by construction.
class Tape {
public:
    // Constant leaf: no gradient is tracked through it.
    Var leaf(Mat value);
    // Parameter leaf bound to external storage. After backward(), the
    // node's gradient is accumulated into *grad_sink.
    Var param(const Mat& value, Mat* grad_sink);

    // Elementwise, same shape.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    // Scalar constants.
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    // out = w*A + b with w, b both 1x1 vars (the structure encoder map).
    Var affine_scalar(Var a, Var w, Var b);

    Var matmul(Var a, Var b);     // A * B
    Var matmul_nt(Var a, Var b);  // A * B^T
    Var transpose(Var a);
    // (m x n) of half squared euclidean distances between rows of x
    // (m x k) and rows of y (n x k). Computed pairwise, so entries are
    // exactly non-negative and exactly zero for coincident rows.
    Var pairwise_half_sqdist(Var x, Var y);

    // Broadcasts: v is a vector whose length matches cols (row) or rows (col).
    Var add_rowvec(Var a, Var v);
    Var add_colvec(Var a, Var v);

    Var row_sumsq(Var a);         // (R x 1), sum of squares per row
    Var logsumexp_rows(Var a);    // (R x 1), max-shifted
    Var softmax_rows(Var a);
    Var gelu(Var a);              // exact erf form
    // Row-wise layer norm with per-feature gain/bias (1 x C vars).
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

    Var gather_rows(Var table, std::vector<int> ids);
    Var slice_block(Var a, int r0, int r1, int c0, int c1);
    Var slice_cols(Var a, int c0, int c1);
    Var concat_cols(const std::vector<Var>& parts);
    Var pick_cols(Var a, std::vector<int> idx);   // (R x 1), a(i, idx[i])
    Var dot_const(Var v, std::vector<double> w);  // (1 x 1), sum_i w_i v_i
    Var sum(Var a);                               // (1 x 1)

    const Mat& value(Var v) const { return nodes_[v.id].val; }
    // Valid after backward(); zero-shaped if the node never received gradient.
    const Mat& grad(Var v) const { return grads_[v.id]; }

    // Seeds d(out)/d(out) = 1 (out must be 1x1), sweeps the tape, then
    // accumulates parameter gradients into their sinks.
    void backward(Var out);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        std::function<void(Tape&)> back;  // null for leaves
        Mat* sink = nullptr;
        bool needs = false;  // gradient required here or upstream
    };

    std::vector<Node> nodes_;
    std::vector<Mat> grads_;

    int push(Mat val, bool needs, std::function<void(Tape&)> back);
    bool needs(Var v) const { return nodes_[v.id].needs; }
    const Mat& val(int id) const { return nodes_[id].val; }
    // Gradient buffer for id, allocated to the node's shape on first use.
    Mat& gbuf(int id);
    bool has_grad(int id) const { return !grads_[id].a.empty(); }

    void check_same_tape(Var a) const;
};

}  // namespace sat
