#pragma once

#include <cstdint>
#include <vector>

#include "card/rng.hpp"
#include "card/tape.hpp"
#include "card/tensor.hpp"

namespace card {

enum class KernelFamily { gaussian, delta };

// Per-side kernel description. For the Gaussian family sigma2 = 0 means
// "resolve by the median heuristic on the data at call time"; the delta
// kernel compares rows for exact equality and has no bandwidth.
struct Kernel {
    KernelFamily family = KernelFamily::gaussian;
    double sigma2 = 0.0;

    static Kernel gaussian(double s2 = 0.0) { return {KernelFamily::gaussian, s2}; }
    static Kernel delta() { return {KernelFamily::delta, 0.0}; }
};

struct KernelConfig {
    Kernel x = Kernel::gaussian();
    Kernel y = Kernel::gaussian();
    double ridge = 1e-3;
};

// sigma^2 = median of pairwise squared distances / 2, so that
// k(x, y) = exp(-|x - y|^2 / (2 sigma^2)). Throws if the points are all
// identical. Above 2000 rows the median is taken over an evenly strided
// subsample, keeping the result deterministic.
double median_heuristic(const Tensor& x);

// K[i][j] = k(a_i, b_j). Gaussian kernels need sigma2 resolved (> 0).
Tensor gram_matrix(const Tensor& a, const Tensor& b, const Kernel& k);

// Biased (V-statistic) HSIC: trace(K H L H) / (N - 1)^2. The y-side Gram
// matrix is the one centered, so a constant y gives exactly zero. Tiny
// negative roundoff is clamped to zero.
double hsic_biased(const Tensor& x, const Tensor& y, const KernelConfig& cfg = {});

// Biased squared MMD with a shared bandwidth resolved on the pooled sample:
// mean(K_xx) + mean(K_yy) - 2 mean(K_xy).
double mmd2_biased(const Tensor& x, const Tensor& y, const KernelConfig& cfg = {});

// Permutation null for an independence or two-sample statistic. p_value
// uses the add-one rule: (1 + #{null >= stat}) / (n_perm + 1).
struct PermTest {
    double stat = 0.0;
    double p_value = 1.0;
    std::vector<double> null_stats;  // sorted ascending

    double quantile(double q) const;
    bool rejects(double alpha = 0.05) const { return p_value < alpha; }
};

// Shuffles the pairing between x rows and y rows.
PermTest hsic_perm_test(const Tensor& x, const Tensor& y, std::size_t n_perm, Rng& rng,
                        const KernelConfig& cfg = {});

// Shuffles the assignment of pooled rows to the two samples.
PermTest mmd2_perm_test(const Tensor& x, const Tensor& y, std::size_t n_perm, Rng& rng,
                        const KernelConfig& cfg = {});

// HSIC(x, y) on a tape, differentiable in x only. y and the x bandwidth
// (median of the current x values unless fixed in cfg) are constants, so
// gradients flow through the x Gram matrix alone.
Var tape_hsic(Tape& t, Var x, const Tensor& y, const KernelConfig& cfg = {});

// Squared MMD between two row samples on a tape, differentiable in both.
// The bandwidth is a constant supplied by the caller.
Var tape_mmd2(Tape& t, Var a, Var b, double sigma2);

}  // namespace card
