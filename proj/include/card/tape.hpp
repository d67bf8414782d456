#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// Scalar math shared by tape ops and the plain (inference) code paths.
inline double sigmoid_d(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_d(double x) {
    // max(x, 0) + log1p(exp(-|x|)) avoids overflow on both sides
    double m = x > 0.0 ? x : 0.0;
    return m + std::log1p(std::exp(-std::fabs(x)));
}

inline double leaky_relu_d(double x, double alpha) { return x > 0.0 ? x : alpha * x; }

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Handle to a node on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape over dense tensors. Intended use is one tape per
// training step: feed constants with input(), trainable tensors with
// param(), compose ops, call backward() on a scalar exactly once, then read
// grad() for each param. Every op checks its output for non-finite values
// and throws with the op name, so divergence surfaces at the op where it
// happened instead of as a NaN loss ten steps later.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor v);
    Var param(const Tensor& v);
    Var constant(double v);

    const Tensor& val(Var v) const;
    const Tensor& grad(Var v) const;
    std::size_t rows(Var v) const { return val(v).rows(); }
    std::size_t cols(Var v) const { return val(v).cols(); }

    Var matmul(Var a, Var b);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);

    Var add_rowvec(Var m, Var r);  // m: N x K, r: 1 x K
    Var add_colvec(Var m, Var c);  // m: N x K, c: N x 1
    Var mul_colvec(Var m, Var c);

    Var affine(Var x, double scale, double shift);
    Var neg(Var x) { return affine(x, -1.0, 0.0); }

    Var slice_cols(Var x, std::size_t c0, std::size_t c1);
    Var concat_cols(Var a, Var b);
    Var gather_rows(Var x, std::vector<std::size_t> idx);

    enum class Act { leaky_relu, tanh, sigmoid, softplus };
    Var activation(Var x, Act kind, double alpha = 0.01);
    Var leaky_relu(Var x, double alpha = 0.01) { return activation(x, Act::leaky_relu, alpha); }
    Var tanh_act(Var x) { return activation(x, Act::tanh); }
    Var sigmoid(Var x) { return activation(x, Act::sigmoid); }
    Var softplus(Var x) { return activation(x, Act::softplus); }

    Var exp_elem(Var x);
    Var log_elem(Var x);
    Var square(Var x) { return mul(x, x); }
    Var clamp(Var x, double lo, double hi);

    Var sum_rows(Var x);  // N x K -> N x 1
    Var sum_all(Var x);   // -> 1 x 1
    Var mean_all(Var x);
    Var softmax_rows(Var x);

    // Elementwise log N(x; mean, exp(log_var)). mean and log_var must match
    // x's shape or be 1x1 (broadcast).
    Var gaussian_log_pdf(Var x, Var mean, Var log_var);

    // K[i][j] = exp(-|a_i - b_j|^2 / (2 sigma2)); differentiable in a and b.
    // The bandwidth is a plain double and is treated as a constant.
    Var gauss_gram(Var a, Var b, double sigma2);

    // Populates gradients for every node that (transitively) depends on a
    // param. loss must be 1x1. May be called once per tape.
    void backward(Var loss);
    bool backward_done() const { return backward_done_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;

    std::size_t push(Tensor value, bool needs_grad, const char* op);
    bool ng(std::size_t id) const { return nodes_[id].needs_grad; }
    const Tensor& v(std::size_t id) const { return nodes_[id].value; }
    Tensor& g(std::size_t id) { return nodes_[id].grad; }
    void check_binary_same_shape(Var a, Var b, const char* op) const;
    void check_valid(Var v, const char* op) const;
};

}  // namespace card
