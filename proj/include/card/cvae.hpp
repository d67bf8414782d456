#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "card/adam.hpp"
#include "card/flows.hpp"
#include "card/mlp.hpp"
#include "card/synth.hpp"
#include "card/tape.hpp"
#include "card/tensor.hpp"

namespace card {

// Encoder log-variances are clamped to this symmetric range so posteriors
// can neither collapse to a point nor blow up.
constexpr double kLogVarClamp = 8.0;

// Stage 1 model: a Gaussian encoder over both latent blocks, a unit-variance
// Gaussian decoder over the features, and a conditional flow prior on the
// latent ordering. The encoder's output columns are the means for all n
// latents followed by their log-variances; within each half the bias-free
// block comes first.
struct CvaeModel {
    LatentSpec spec;
    std::size_t feature_dim = 0;
    std::size_t s_dim = 1;
    double beta = 0.1;
    double lambda = 3.0;
    // Bandwidth for the independence penalty's input kernel. Zero picks the
    // median pairwise distance per batch; a positive value pins it, which the
    // gradient check needs because the median is treated as a constant by the
    // tape but moves when finite differences perturb the encoder.
    double hsic_sigma2 = 0.0;
    Mlp encoder;      // feature_dim -> hidden -> hidden -> 2n
    Mlp decoder;      // n -> hidden -> hidden -> feature_dim
    FlowPrior prior;

    static CvaeModel make(const LatentSpec& spec, std::size_t feature_dim,
                          std::size_t s_dim, double beta, double lambda, Rng& rng,
                          std::size_t hidden = 128);

    ParamRefs params();  // encoder, decoder, prior, in a stable flat order
};

struct Posterior {
    Tensor mean;     // N x n
    Tensor log_var;  // N x n, already clamped
};

Posterior encode(const CvaeModel& m, const Tensor& t);

// z = mean + exp(log_var / 2) * noise. Clamps log_var again so a hand-built
// posterior cannot produce non-finite scales.
Tensor reparameterize(const Posterior& p, const Tensor& noise);

Tensor extract_zc(const CvaeModel& m, const Tensor& t);  // posterior means, bias-free block
Tensor extract_zs(const CvaeModel& m, const Tensor& t);  // spurious block
Tensor extract_z(const CvaeModel& m, const Tensor& t);   // both blocks

// Tape-bound parameters, mirroring the order of CvaeModel::params().
struct CvaeBound {
    Mlp::Bound encoder, decoder;
    std::vector<Mlp::Bound> prior;
};

CvaeBound bind_cvae(Tape& t, const CvaeModel& m);
// Reassembles a bound from an externally supplied flat parameter list (same
// order as params()); used when the parameters live outside the model.
CvaeBound bound_from_vars(const CvaeModel& m, const std::vector<Var>& flat);
// Gradients in the flat params() order; call after Tape::backward.
std::vector<Tensor> cvae_grads(const Tape& t, const CvaeBound& bd);

struct LossGraph {
    Var total, recon, kl, hsic;
};

// total = recon + beta * kl + lambda * hsic, with
//   recon = mean over the batch of the negative Gaussian log-likelihood of t,
//   kl    = single-sample estimate of E_q[log q(z|t) - log p(z|s)] via the
//           reparameterized z and the flow prior,
//   hsic  = biased HSIC between the sampled bias-free block and s (delta
//           kernel on s, median-bandwidth Gaussian kernel on the block).
// noise must be standard normal of shape N x n; the loss is a deterministic
// function of (parameters, t, s, noise).
LossGraph build_loss(Tape& tape, const CvaeModel& m, const CvaeBound& bd,
                     const Tensor& t, const Tensor& s, const Tensor& noise);

struct LossBreakdown {
    double total = 0.0, recon = 0.0, kl = 0.0, hsic = 0.0;
};

LossBreakdown loss(const CvaeModel& m, const Tensor& t, const Tensor& s,
                   const Tensor& noise);

struct CvaeTrainConfig {
    std::size_t batch = 240;
    std::size_t epochs = 10;
    double beta = 0.1;
    double lambda = 3.0;
    std::size_t hidden = 128;
    AdamConfig adam{};
    // Per-epoch multiplicative learning-rate decay; 1 keeps the rate fixed.
    double lr_decay = 1.0;
    std::uint64_t seed = 0;
};

struct CvaeTrainResult {
    CvaeModel model;
    std::vector<double> epoch_loss;  // mean batch total per epoch
};

// Minibatch Adam over shuffled rows; incomplete tail batches are dropped so
// every step sees a full batch. s must be one column per surrogate feature.
CvaeTrainResult train_cvae(const Tensor& t, const Tensor& s, const LatentSpec& spec,
                           const CvaeTrainConfig& cfg);

void save_cvae(const CvaeModel& m, const std::string& path);
CvaeModel load_cvae(const std::string& path);

}  // namespace card
