#include "card/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "card/kernels.hpp"
#include "card/tape.hpp"

namespace card {

namespace {

void require_prefs(const PreferenceDataset& prefs) {
    if (prefs.size() == 0) throw std::invalid_argument("preference set is empty");
    if (prefs.chosen.rows() != prefs.size() || prefs.rejected.rows() != prefs.size() ||
        prefs.context.rows() != prefs.size())
        throw std::invalid_argument("preference tensors disagree on the pair count");
    if (prefs.chosen.cols() != prefs.rejected.cols())
        throw std::invalid_argument("chosen and rejected items differ in width");
}

Tensor hstack(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros({a.rows(), a.cols() + b.cols()});
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) = a.at(r, c);
        for (std::size_t c = 0; c < b.cols(); ++c) out.at(r, a.cols() + c) = b.at(r, c);
    }
    return out;
}

// Median of the pairwise squared distances between batch scores, the same
// stop-gradient bandwidth rule the independence penalty uses. Scores are a
// column, so this is cheap even at full batch width.
double score_bandwidth(const Tensor& scores) {
    std::vector<double> d2;
    d2.reserve(scores.rows() * (scores.rows() - 1) / 2);
    for (std::size_t i = 0; i < scores.rows(); ++i)
        for (std::size_t j = i + 1; j < scores.rows(); ++j) {
            const double d = scores.at(i, 0) - scores.at(j, 0);
            d2.push_back(d * d);
        }
    std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
    const double med = d2[d2.size() / 2];
    return med > 0.0 ? med : 1.0;
}

RewardModel train_bt(const PreferenceDataset& prefs, const Featurizer& featurize,
                     const std::string& features, double gamma, const RewardTrainConfig& cfg) {
    require_prefs(prefs);
    if (cfg.batch < 1) throw std::invalid_argument("batch must be positive");
    if (cfg.hidden < 1) throw std::invalid_argument("hidden width must be positive");
    if (gamma < 0.0) throw std::invalid_argument("gamma must be nonnegative");

    const Tensor fc = featurize(prefs.chosen);
    const Tensor fr = featurize(prefs.rejected);
    if (fc.rows() != prefs.size() || fr.rows() != prefs.size() || fc.cols() != fr.cols())
        throw std::invalid_argument("featurizer changed the row count or is asymmetric");
    const Tensor xc = hstack(prefs.context, fc);
    const Tensor xr = hstack(prefs.context, fr);

    if (gamma > 0.0) {
        const std::size_t on =
            std::size_t(std::count(prefs.cue_on_chosen.begin(), prefs.cue_on_chosen.end(), 1));
        if (on == 0 || on == prefs.size())
            throw std::invalid_argument("invariance penalty needs both cue groups present");
    }

    RewardModel model;
    model.features = features;
    model.featurize = featurize;
    Rng init_rng = Rng::stream(cfg.seed, 0);
    model.scorer = Mlp::make({xc.cols(), cfg.hidden, cfg.hidden, 1}, init_rng);

    Adam opt(cfg.adam);
    ParamRefs refs;
    model.scorer.collect("scorer", refs);
    std::vector<Tensor*> param_ptrs;
    for (auto& [name, tensor] : refs) param_ptrs.push_back(tensor);

    Rng shuffle_rng = Rng::stream(cfg.seed, 1);
    const std::size_t pairs = prefs.size();
    const std::size_t batch = std::min(cfg.batch, pairs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffle_rng.permutation(pairs);
        for (std::size_t start = 0; start < pairs; start += batch) {
            const std::size_t rows = std::min(batch, pairs - start);
            Tensor bx = Tensor::zeros({2 * rows, xc.cols()});
            std::vector<std::size_t> idx_c(rows), idx_r(rows), idx_cue, idx_free;
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t src = order[start + r];
                for (std::size_t c = 0; c < xc.cols(); ++c) {
                    bx.at(r, c) = xc.at(src, c);
                    bx.at(rows + r, c) = xr.at(src, c);
                }
                idx_c[r] = r;
                idx_r[r] = rows + r;
                (prefs.cue_on_chosen[src] ? idx_cue : idx_free).push_back(r);
                (prefs.cue_on_chosen[src] ? idx_free : idx_cue).push_back(rows + r);
            }

            Tape tape;
            const Mlp::Bound bd = model.scorer.bind(tape);
            try {
                const Var all = model.scorer.apply(tape, bd, tape.input(bx));
                const Var diff =
                    tape.sub(tape.gather_rows(all, idx_c), tape.gather_rows(all, idx_r));
                Var loss = tape.mean_all(tape.softplus(tape.neg(diff)));
                if (gamma > 0.0 && idx_cue.size() > 1 && idx_free.size() > 1) {
                    const double sigma2 = score_bandwidth(tape.val(all));
                    const Var mmd = tape_mmd2(tape, tape.gather_rows(all, idx_cue),
                                              tape.gather_rows(all, idx_free), sigma2);
                    loss = tape.add(loss, tape.affine(mmd, gamma, 0.0));
                }
                tape.backward(loss);
            } catch (const std::exception& e) {
                throw std::runtime_error("reward training diverged at epoch " +
                                         std::to_string(epoch) + ", batch offset " +
                                         std::to_string(start) + ": " + e.what());
            }

            std::vector<const Tensor*> grad_ptrs;
            grad_ptrs.reserve(param_ptrs.size());
            for (std::size_t l = 0; l < bd.w.size(); ++l) {
                grad_ptrs.push_back(&tape.grad(bd.w[l]));
                grad_ptrs.push_back(&tape.grad(bd.b[l]));
            }
            opt.step(param_ptrs, grad_ptrs);
        }
    }
    return model;
}

}  // namespace

double bt_nll(double r_chosen, double r_rejected) {
    if (!std::isfinite(r_chosen) || !std::isfinite(r_rejected))
        throw std::invalid_argument("bt_nll needs finite scores");
    const double d = r_chosen - r_rejected;
    return d >= 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

Featurizer raw_features() {
    return [](const Tensor& items) { return items; };
}

Tensor RewardModel::score(const Tensor& context, const Tensor& items) const {
    if (context.rows() != items.rows())
        throw std::invalid_argument("context and item row counts differ");
    return scorer.forward(hstack(context, featurize(items)));
}

RewardModel train_reward(const PreferenceDataset& prefs, const Featurizer& featurize,
                         const std::string& features, const RewardTrainConfig& cfg) {
    return train_bt(prefs, featurize, features, 0.0, cfg);
}

RewardModel train_crm(const PreferenceDataset& prefs, double gamma,
                      const RewardTrainConfig& cfg) {
    return train_bt(prefs, raw_features(), "raw+mmd", gamma, cfg);
}

RewardModel train_crm_swept(const PreferenceDataset& prefs, const PreferenceDataset& validation,
                            const std::vector<double>& gammas, const RewardTrainConfig& cfg) {
    if (gammas.empty()) throw std::invalid_argument("gamma grid is empty");
    RewardModel best;
    double best_acc = -1.0;
    for (double gamma : gammas) {
        RewardModel m = train_crm(prefs, gamma, cfg);
        const double acc = eval_accuracy(m, validation);
        if (acc > best_acc) {
            best_acc = acc;
            best = std::move(m);
        }
    }
    return best;
}

std::vector<double> crm_gamma_grid() { return {1.0, 3.0, 10.0, 30.0, 100.0}; }

Tensor RandomReward::score(const Tensor& context, const Tensor& items) {
    if (context.rows() != items.rows())
        throw std::invalid_argument("context and item row counts differ");
    Tensor out = Tensor::zeros({items.rows(), 1});
    for (std::size_t r = 0; r < items.rows(); ++r) out.at(r, 0) = rng_.uniform(-10.0, 10.0);
    return out;
}

ScoreFn score_fn(const RewardModel& model) {
    return [&model](const Tensor& context, const Tensor& items) {
        return model.score(context, items);
    };
}

ScoreFn score_fn(RandomReward& model) {
    return [&model](const Tensor& context, const Tensor& items) {
        return model.score(context, items);
    };
}

double eval_accuracy(const ScoreFn& score, const PreferenceDataset& prefs) {
    require_prefs(prefs);
    const Tensor rc = score(prefs.context, prefs.chosen);
    const Tensor rr = score(prefs.context, prefs.rejected);
    double hits = 0.0;
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        if (rc.at(i, 0) > rr.at(i, 0))
            hits += 1.0;
        else if (rc.at(i, 0) == rr.at(i, 0))
            hits += 0.5;
    }
    return hits / double(prefs.size());
}

double eval_accuracy(const RewardModel& model, const PreferenceDataset& prefs) {
    return eval_accuracy(score_fn(model), prefs);
}

std::vector<double> deviation_from_oracle(const std::vector<double>& method_curve,
                                          const std::vector<double>& oracle_curve) {
    if (method_curve.size() != oracle_curve.size() || method_curve.empty())
        throw std::invalid_argument("curves must cover the same nonempty grid");
    std::vector<double> out(method_curve.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(method_curve[i] - oracle_curve[i]);
    return out;
}

double bias_at_c(const ScoreFn& score, const PreferenceDataset& probe) {
    require_prefs(probe);
    const std::size_t on =
        std::size_t(std::count(probe.cue_on_chosen.begin(), probe.cue_on_chosen.end(), 1));
    if (2 * on != probe.size())
        throw std::invalid_argument("bias probe must put the concept on exactly half the chosen items");
    const Tensor rc = score(probe.context, probe.chosen);
    const Tensor rr = score(probe.context, probe.rejected);
    double prefers = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double bearer = probe.cue_on_chosen[i] ? rc.at(i, 0) : rr.at(i, 0);
        const double other = probe.cue_on_chosen[i] ? rr.at(i, 0) : rc.at(i, 0);
        if (bearer > other)
            prefers += 1.0;
        else if (bearer == other)
            prefers += 0.5;
    }
    return 2.0 * std::abs(prefers / double(probe.size()) - 0.5);
}

double BiasReport::worst_case_accuracy() const {
    if (accuracy.empty()) throw std::logic_error("report has no accuracy curve");
    return *std::min_element(accuracy.begin(), accuracy.end());
}

std::vector<double> BiasReport::deviations() const {
    return deviation_from_oracle(accuracy, oracle);
}

double BiasReport::avg_bias() const {
    if (bias_at_c.empty()) throw std::logic_error("report has no bias values");
    double sum = 0.0;
    for (double b : bias_at_c) sum += b;
    return sum / double(bias_at_c.size());
}

}  // namespace card
