#pragma once

#include <vector>

#include "sat/matrix.hpp"
#include "sat/tape.hpp"

namespace sat {

// A discrete measure: m weighted points in k dimensions.
struct PointCloud {
    Mat points;                    // m x k
    std::vector<double> weights;   // non-negative, sum to 1 within 1e-9
};

// Rows of a matrix as uniformly weighted points. An n x n matrix thus
// becomes n points living in n dimensions.
PointCloud cloud_from_rows(Mat points);

void validate(const PointCloud& cloud);

struct SinkhornConfig {
    // Entropic blur at the final solver stage. With relative_epsilon
    // set, the effective value is epsilon * (joint cloud diameter)^2,
    // floored at 1e-12; otherwise epsilon is used as given.
    double epsilon = 0.05;
    bool relative_epsilon = true;
    // Geometric decay factor of the blur schedule, which starts at the
    // squared diameter and ends at the effective epsilon.
    double scaling = 0.5;
    // Iteration budget per subproblem (each self term and the cross
    // term count separately).
    int max_iters = 200;
    // Stop once the sup-norm change of the potentials drops below tol.
    double tol = 1e-6;
};

void validate(const SinkhornConfig& cfg);

struct SinkhornResult {
    double value = 0.0;
    std::vector<double> f;  // potential per point of x
    std::vector<double> g;  // potential per point of y
    int iters = 0;          // update sweeps across all subproblems
    bool converged = false;
};

// Entry (i,j) = half the squared euclidean distance between point i of
// x and point j of y.
Mat cost_matrix(const PointCloud& x, const PointCloud& y);

// Entropic transport cost OT_eps(x,y): log-domain softmin iterations
// with a geometric blur schedule, value = <w,f> + <v,g> at the fixed
// point. Non-convergence is reported through the result flag; the last
// iterate's value is still returned.
SinkhornResult ot_eps(const PointCloud& x, const PointCloud& y, const SinkhornConfig& cfg);

// Debiased divergence S_eps(x,y) = OT_eps(x,y) - OT_eps(x,x)/2
// - OT_eps(y,y)/2. The self terms use the symmetric fixed-point update
// p <- (p + T(p))/2 and the cross solve starts from those potentials,
// so S_eps(x,x) vanishes to solver precision.
SinkhornResult sinkhorn_divergence(const PointCloud& x, const PointCloud& y,
                                   const SinkhornConfig& cfg);

// Exact unregularized transport cost for small uniform clouds: direct
// permutation enumeration when sizes match, an integral min-cost flow
// on lcm-scaled supplies otherwise. Throws TooLarge above 8 points.
double exact_ot_oracle(const PointCloud& x, const PointCloud& y);

// Differentiable divergence on an existing tape: x and y are (m x k)
// and (n x k) vars. The blur schedule and iteration counts are driven
// by detached values, so the gradient treats them as constants.
struct SinkhornVarResult {
    Var value;
    int iters = 0;
    bool converged = false;
};
SinkhornVarResult sinkhorn_divergence_var(Tape& t, Var x, Var y,
                                          const std::vector<double>& wx,
                                          const std::vector<double>& wy,
                                          const SinkhornConfig& cfg);

// Convenience wrapper running forward + reverse in one call: gradients
// of upstream * S_eps(x,y) with respect to both coordinate sets.
struct SinkhornGradResult {
    double value = 0.0;
    Mat dx;
    Mat dy;
    int iters = 0;
    bool converged = false;
};
SinkhornGradResult sinkhorn_backward(const PointCloud& x, const PointCloud& y,
                                     const SinkhornConfig& cfg, double upstream = 1.0);

}  // namespace sat
