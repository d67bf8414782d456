#pragma once

#include "card/rng.hpp"
#include "card/tensor.hpp"

namespace card {

struct KrrConfig {
    double ridge = 1e-3;
    double train_frac = 0.8;
    std::size_t max_samples = 4000;  // subsample cap before splitting
};

// Held-out R^2 for predicting y from x with Gaussian-kernel ridge
// regression (median-heuristic bandwidth on the train split), averaged over
// target coordinates. Rows are subsampled and split with rng. Throws when a
// target coordinate has zero variance on the test split.
double krr_r2(const Tensor& x, const Tensor& y, Rng& rng, const KrrConfig& cfg = {});

// Mean of the two directional scores: predict zhat from z and z from zhat.
double krr_r2_mean(const Tensor& z, const Tensor& zhat, Rng& rng, const KrrConfig& cfg = {});

}  // namespace card
