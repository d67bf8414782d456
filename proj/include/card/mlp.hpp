#pragma once

#include <string>
#include <utility>
#include <vector>

#include "card/rng.hpp"
#include "card/tape.hpp"
#include "card/tensor.hpp"

namespace card {

// Named references to parameter tensors, in a stable order. Used for the
// optimizer and for checkpoints.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

// Fully connected stack. Hidden layers use leaky ReLU, the output layer is
// linear. Weights are He-initialized, biases start at zero.
struct Mlp {
    std::vector<std::size_t> dims;  // in, hidden..., out
    std::vector<Tensor> w;          // dims[l] x dims[l+1]
    std::vector<Tensor> b;          // 1 x dims[l+1]
    double alpha = 0.01;

    static Mlp make(std::vector<std::size_t> dims, Rng& rng, double alpha = 0.01);

    std::size_t in_dim() const { return dims.front(); }
    std::size_t out_dim() const { return dims.back(); }
    std::size_t layers() const { return w.size(); }

    // Zeroes the last layer's weights; callers can then pin its bias to get
    // a fixed initial output regardless of the input.
    void zero_output_layer();

    struct Bound {
        std::vector<Var> w, b;
    };
    Bound bind(Tape& t) const;
    Var apply(Tape& t, const Bound& bd, Var x) const;

    Tensor forward(const Tensor& x) const;  // plain inference path

    void collect(const std::string& prefix, ParamRefs& out);
};

}  // namespace card
