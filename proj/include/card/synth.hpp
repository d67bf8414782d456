#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "card/mlp.hpp"
#include "card/rng.hpp"
#include "card/tensor.hpp"

namespace card {

struct LatentSpec {
    std::size_t n_c = 0;  // bias-free latents
    std::size_t n_s = 0;  // spurious latents
    std::size_t n() const { return n_c + n_s; }
};

// Latents are indexed in topological order with the bias-free block first:
// nodes 0..n_c-1 are the Z_C block, nodes n_c..n-1 the Z_S block. Edges
// always point from lower to higher index, so every graph is acyclic and no
// Z_S node can reach a Z_C node.
struct Dag {
    LatentSpec spec;
    std::vector<std::vector<std::size_t>> parents;  // parents[v], sorted, all < v
};

// Erdos-Renyi draw over the admissible ordered pairs.
Dag sample_dag(const LatentSpec& spec, double edge_prob, std::uint64_t seed);

// reach[u][v] is true iff a directed path u -> ... -> v exists.
std::vector<std::vector<bool>> ancestor_closure(const Dag& dag);

// Ancestral-sampling model: each latent is a two-layer MLP of its parents
// plus additive Gaussian noise, observations are a square invertible MLP of
// the full latent vector. The surrogate acts on the Z_S block only, as a
// per-value affine map of the noisy mechanism output,
//   z_j = gain[s][j] * (mech_j(pa) + sigma_j * eps) + shift[s][j].
// Shifts are +/-delta_j with delta_j from U[1.5, 3] and the sign alternating
// with s; gains are drawn per (s, j) from U[0.7, 1.4]. Scaling the noise
// along with the mechanism output means both the conditional mean and the
// conditional variance of every spurious coordinate move with s, so no
// nontrivial function of the Z_S block is distribution-invariant across s,
// which is the variability the identifiability theory needs. Parentless
// mechanisms take a constant 1 input and reduce to a learned bias plus
// noise.
struct Scm {
    Dag dag;
    std::vector<Mlp> mechanisms;      // node i: parents (or constant) -> hidden -> 1
    std::vector<double> noise_scale;  // sigma_i from U[1, 2]
    std::size_t n_s_values = 2;
    std::vector<std::vector<double>> s_gain;   // [s][j], j over Z_S nodes
    std::vector<std::vector<double>> s_shift;  // [s][j], sign alternating with s
    Mlp mixing;  // n -> n -> n, orthogonal weight matrices

    Tensor mix(const Tensor& z) const;  // rows of latents -> rows of observations
};

// mech_hidden of 0 means the default width 2n.
Scm build_scm(const Dag& dag, std::uint64_t seed, std::size_t n_s_values = 2,
              std::size_t mech_hidden = 0);

struct SynthDataset {
    LatentSpec spec;
    Tensor t;            // N x n observations (mixing is square, so d = n)
    Tensor z;            // N x n ground-truth latents
    std::vector<int> s;  // N surrogate values
};

// Rows come out grouped by surrogate value, n_per_s rows per value, in the
// order the values are listed.
SynthDataset generate_dataset(const Scm& scm, std::size_t n_per_s,
                              const std::vector<int>& s_values, std::uint64_t seed);

Tensor zc_block(const SynthDataset& ds);
Tensor zs_block(const SynthDataset& ds);

// Rows of m whose tag equals value.
Tensor rows_where(const Tensor& m, const std::vector<int>& tag, int value);

}  // namespace card
