#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "card/mlp.hpp"
#include "card/rng.hpp"
#include "card/tape.hpp"
#include "card/tensor.hpp"

namespace card {

// Largest x with softplus(x) == 1.0 in double arithmetic, found by a
// nextafter walk. Used to initialize flow slopes to exactly one.
double identity_softplus_arg();

// Conditional prior over latents on a fully connected DAG that follows the
// fixed index ordering: nodes 0..n_c-1 are the content block, the rest the
// surrogate-affected block. Node i conditions on all earlier nodes; nodes in
// the surrogate block additionally receive s. Each node's conditional is a
// monotone scalar flow (K sigmoidal units composed with a logit link) whose
// parameters come from a one-hidden-layer MLP over the conditioning values.
//
// Freshly made priors are the identity transform: the final MLP layers are
// zeroed and their biases set so each unit has weight 1/K, slope exactly 1
// and shift 0, which makes the transformed noise equal the input and the
// log-derivative exactly 0.0.
struct FlowPrior {
    std::size_t n_c = 0, n_s = 0, s_dim = 0;
    std::size_t k = 8, hidden = 32;
    std::vector<Mlp> nets;  // one per node, output 3k (unit logits, raw slopes, shifts)

    static FlowPrior make(std::size_t n_c, std::size_t n_s, std::size_t s_dim, Rng& rng);

    std::size_t n_total() const { return n_c + n_s; }
    std::size_t cond_dim(std::size_t node) const;

    // Batched tape path: per-sample log p(z | s), N x 1. s must have n_s==0
    // or N rows and s_dim columns; gradients flow into z and the flow
    // parameters bound in `bound` (one Mlp::Bound per node, from bind()).
    std::vector<Mlp::Bound> bind(Tape& t) const;
    Var log_density(Tape& t, const std::vector<Mlp::Bound>& bound, Var z, const Tensor& s) const;

    // Plain scalar path for one node. cond holds the parent values (earlier
    // coordinates) followed by s for surrogate-block nodes, cond_dim(node)
    // entries in total; a parentless node feeds its MLP a constant 1
    // internally.
    struct NodeEval {
        double eps = 0.0;
        double log_deriv = 0.0;
    };
    NodeEval flow_forward(double z_i, const std::vector<double>& cond, std::size_t node) const;

    // Per-node conditional log densities and their sum, plain path.
    std::vector<double> node_log_densities(const std::vector<double>& z,
                                           const std::vector<double>& s) const;
    double prior_log_density(const std::vector<double>& z, const std::vector<double>& s) const;

    void collect(const std::string& prefix, ParamRefs& out);
};

}  // namespace card
