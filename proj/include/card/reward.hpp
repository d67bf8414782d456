#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "card/adam.hpp"
#include "card/corpus.hpp"
#include "card/mlp.hpp"
#include "card/rng.hpp"
#include "card/tensor.hpp"

namespace card {

// Bradley-Terry negative log-likelihood of preferring the first score,
// -log sigmoid(r_chosen - r_rejected), in the stable softplus form.
double bt_nll(double r_chosen, double r_rejected);

// Maps item rows to scorer inputs. Identity for the raw baselines; the
// two-stage method plugs in the learned content-block extraction here, so
// the scorer never sees the cue coordinate.
using Featurizer = std::function<Tensor(const Tensor& items)>;

Featurizer raw_features();

struct RewardModel {
    std::string features = "raw";  // which representation the scorer was trained on
    Featurizer featurize;
    Mlp scorer;  // context then featurized item columns -> scalar

    // One score per row; context and items must have matching row counts.
    Tensor score(const Tensor& context, const Tensor& items) const;
};

struct RewardTrainConfig {
    std::size_t batch = 120;  // pairs per step; items seen per step is twice this
    std::size_t epochs = 30;
    std::size_t hidden = 128;
    AdamConfig adam{1e-3};
    std::uint64_t seed = 0;
};

// Maximum-likelihood Bradley-Terry training of a fresh scorer MLP on the
// featurized pairs. Deterministic under cfg.seed; throws if the loss leaves
// the finite range.
RewardModel train_reward(const PreferenceDataset& prefs, const Featurizer& featurize,
                         const std::string& features, const RewardTrainConfig& cfg);

// Same objective plus gamma times the squared MMD between the scores of
// cue-bearing and cue-free items in each batch (bandwidth: median pairwise
// squared distance of the batch scores, treated as a constant). gamma = 0
// follows train_reward's trajectory exactly. Both cue groups must be
// nonempty in the corpus.
RewardModel train_crm(const PreferenceDataset& prefs, double gamma,
                      const RewardTrainConfig& cfg);

// Trains one model per candidate gamma and keeps the one with the highest
// validation accuracy; earlier candidates win ties.
RewardModel train_crm_swept(const PreferenceDataset& prefs, const PreferenceDataset& validation,
                            const std::vector<double>& gammas, const RewardTrainConfig& cfg);

// The gamma grid the coefficient is swept over.
std::vector<double> crm_gamma_grid();

// Scores are i.i.d. Unif[-10, 10] draws from a seeded stream, one per row
// per call, regardless of the input.
class RandomReward {
public:
    explicit RandomReward(std::uint64_t seed) : rng_(seed) {}
    Tensor score(const Tensor& context, const Tensor& items);

private:
    Rng rng_;
};

// Any row scorer: context rows and item rows to one score per row.
using ScoreFn = std::function<Tensor(const Tensor& context, const Tensor& items)>;

ScoreFn score_fn(const RewardModel& model);
ScoreFn score_fn(RandomReward& model);  // advances the model's stream per call

// Fraction of pairs whose chosen item outscores the rejected one; exact
// ties count half.
double eval_accuracy(const ScoreFn& score, const PreferenceDataset& prefs);
double eval_accuracy(const RewardModel& model, const PreferenceDataset& prefs);

// |acc_method - acc_oracle| per grid point; curves must be equally long.
std::vector<double> deviation_from_oracle(const std::vector<double>& method_curve,
                                          const std::vector<double>& oracle_curve);

// Concept-attachment bias on a balanced probe (exactly half the chosen
// items bear the color concept): twice the distance between 1/2 and the
// rate at which the model prefers the color-bearing item of a pair. Zero
// for concept-blind scorers, one for scorers that read only the concept.
double bias_at_c(const ScoreFn& score, const PreferenceDataset& probe);

// Accuracy curves and oracle gaps over a shift grid, plus the concept-bias
// numbers where the benchmark measures them. Filled by the benchmark
// drivers; deviations and worst-case values are derived, not stored twice.
struct BiasReport {
    std::vector<double> grid;       // p_test values
    std::vector<double> accuracy;   // per grid point
    std::vector<double> oracle;     // oracle accuracy per grid point
    std::vector<double> bias_at_c;  // per grid point where measured, else empty

    double worst_case_accuracy() const;
    std::vector<double> deviations() const;  // |accuracy - oracle| pointwise
    double avg_bias() const;                 // mean of bias_at_c
};

}  // namespace card
