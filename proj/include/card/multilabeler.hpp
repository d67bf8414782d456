#pragma once

#include <cstdint>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// Several labelers rate the same items, each scoring through linear reward
// rows over a fixed subset of the latent coordinates, and the latents are
// observed only through an invertible linear mixing. The coordinates every
// labeler uses, B, are the recovery target: a sparsity-constrained fit finds
// a basis in which each labeler's rows are sparse, and the overlap of the
// fitted supports plays the role of B.

struct MultiTaskDataset {
    std::size_t n = 0;  // latent dimension
    double noise_sd = 0.0;

    // Visible to the fit: features, rewards, which labeler produced each
    // task row, each labeler's support size, and the size bound |B|.
    Tensor t;                                // N x n observed features
    Tensor rewards;                          // N x M, one column per task row
    std::vector<std::size_t> task_labeler;   // size M
    std::vector<std::size_t> support_sizes;  // per labeler
    std::size_t shared_size = 0;

    // Ground truth, for verification only; the fit must not read past here.
    Tensor z;                                        // N x n, z = t * mixing^T
    Tensor w;                                        // M x n weight rows
    std::vector<std::vector<std::size_t>> supports;  // per labeler, sorted
    std::vector<std::size_t> shared;                 // intersection, sorted
    Tensor mixing;                                   // n x n map from t to z

    std::size_t labelers() const { return supports.size(); }
    std::size_t tasks() const { return task_labeler.size(); }
};

// Samples a multi-labeler instance with linear rewards. Latents are i.i.d.
// standard normal, the mixing is a random well-conditioned linear map, and
// each labeler contributes tasks_per_labeler reward rows whose support
// entries have magnitude in [0.5, 1.5] with random sign, so every row's
// support is exactly the labeler's set. content names the coordinates meant
// to be bias-free; generation refuses instances whose labeler structure
// cannot single them out:
//  - a content coordinate missing from some labeler's support (every
//    labeler must use every bias-free latent), or
//  - a non-content coordinate present in every support (a spurious latent
//    shared by all labelers cannot be told apart from a bias-free one).
// Each coordinate must appear in at least one support and n_samples must be
// at least n, so the drawn latents and reward rows span the full space; the
// draw is retried if either rank check fails. tasks_per_labeler = 0 means n
// rows per labeler, enough for each labeler's rows to span its subspace.
MultiTaskDataset generate_linear_tasks(std::size_t n,
                                       const std::vector<std::vector<std::size_t>>& supports,
                                       const std::vector<std::size_t>& content,
                                       std::size_t n_samples, double noise_sd,
                                       std::uint64_t seed,
                                       std::size_t tasks_per_labeler = 0);

struct SharedRecovery {
    Tensor f_hat;  // n x n basis; the latent estimate is t * f_hat^T
    Tensor w_hat;  // M x n fitted rows, zero off the chosen supports
    std::vector<std::vector<std::size_t>> task_supports;  // chosen per task
    std::vector<std::size_t> b_hat;  // intersection of chosen supports
    bool feasible = false;           // |b_hat| <= the dataset's shared_size
    std::vector<double> task_nll;    // per-task mean Gaussian NLL at the fit
    double nll = 0.0;                // sum of task_nll
};

// Recovers the shared coordinates in three steps. First the reward columns
// are regressed on t in one pooled least-squares pass, and a basis is
// assembled from the per-labeler spans of the coefficient rows: directions
// shared by all labelers first (their count is pinned by shared_size), then
// each labeler's remaining directions, then a completion to full rank. Next,
// for every task row, all supports of that labeler's size are enumerated in
// the assembled basis and the least-squares fit with the smallest Gaussian
// NLL is kept (unit noise variance, so NLL-minimal means least-squares
// minimal), together with any supports that tie. Finally, one support per
// task is selected from the tied sets so that the intersection of the
// chosen supports is as small as possible, with ties broken by lexicographic
// support order; the result is feasible when that intersection is within
// shared_size. Throws when n exceeds 10 (support enumeration), when a
// labeler has fewer rows than its support size (its span would be
// underdetermined), or when the tie sets multiply into more than 200000
// combinations.
SharedRecovery fit_constrained(const MultiTaskDataset& data, std::size_t n);

// Same fit with the basis fixed to f_init (n x n, invertible) instead of
// assembled from the data. With identity mixing and the identity basis the
// fit reproduces the generating weights exactly on noiseless data.
SharedRecovery fit_constrained(const MultiTaskDataset& data, std::size_t n,
                               const Tensor& f_init);

// Latent estimate t * f_hat^T, and its recovered shared block.
Tensor recovered_latents(const SharedRecovery& rec, const Tensor& t);
Tensor recovered_shared(const SharedRecovery& rec, const Tensor& t);

// Mean of the two directional linear-regression R^2 scores between the two
// blocks (each regressed on the other, with intercept). A full-rank linear
// relation scores 1 regardless of which one; independent blocks score about
// zero. Throws when the blocks disagree in rows or in width.
double verify_subspace(const Tensor& z_b, const Tensor& zhat_b);

// Columns of m at the given indices, in the given order.
Tensor take_columns(const Tensor& m, const std::vector<std::size_t>& cols);

// All size-sized subsets of {0, ..., n-1}, each sorted, in lexicographic
// order.
std::vector<std::vector<std::size_t>> all_supports(std::size_t n, std::size_t size);

}  // namespace card
