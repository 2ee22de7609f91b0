#pragma once

#include <vector>

#include "sat/matrix.hpp"

namespace sat {

// Per-head attention matrices tapped from one transformer layer, with
// special-marker rows and columns already sliced away. Post-softmax
// entries are row-stochastic probabilities; the pre-softmax form holds
// the scaled dot-product scores instead.
struct AttentionTensor {
    std::vector<Mat> heads;
    int layer = 0;
    bool pre_softmax = false;
};

}  // namespace sat
