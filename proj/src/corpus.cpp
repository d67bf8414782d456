#include "card/corpus.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "card/rng.hpp"

namespace card {

namespace {

// Item content puts a scalar quality on the uniform unit direction plus iid
// Gaussian noise, so coordinate k is quality / sqrt(dim) + noise. Quality is
// a pair-shared base level plus or minus half the pair's gap: the base level
// varies widely across pairs while only the gap decides which item is
// better. The gap ranges put the content-only Bayes accuracy near 0.7 for
// the agreement corpus and a little lower for the concept one, so the cue
// stays genuinely informative at train time.
constexpr double kBaseSd = 1.0;
constexpr double kNoiseSd = 1.0;
constexpr double kGapLoSyc = 0.3, kGapHiSyc = 1.2;
constexpr double kGapLoCon = 0.25, kGapHiCon = 1.0;

PreferenceDataset build_pairs(std::size_t base_size, double p, std::uint64_t seed,
                              std::size_t context_dim, std::size_t item_dim,
                              std::size_t content_dim, double gap_lo, double gap_hi,
                              const std::vector<std::uint8_t>* forced_cue) {
    if (base_size < 1) throw std::invalid_argument("corpus needs at least one pair");
    if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("injection rate must lie in [0, 1]");

    PreferenceDataset d;
    d.p = p;
    d.context = Tensor::zeros({base_size, context_dim});
    d.chosen = Tensor::zeros({base_size, item_dim});
    d.rejected = Tensor::zeros({base_size, item_dim});
    d.cue_on_chosen.resize(base_size);
    d.chosen_correct.assign(base_size, 1);

    const double inv_root = 1.0 / std::sqrt(double(content_dim));
    Rng rng = Rng::stream(seed, 0);
    for (std::size_t i = 0; i < base_size; ++i) {
        for (std::size_t k = 0; k < context_dim; ++k) d.context.at(i, k) = rng.normal();
        const double base = kBaseSd * rng.normal();
        const double gap = rng.uniform(gap_lo, gap_hi);
        const double q_chosen = (base + 0.5 * gap) * inv_root;
        const double q_rejected = (base - 0.5 * gap) * inv_root;
        for (std::size_t k = 0; k < content_dim; ++k)
            d.chosen.at(i, k) = q_chosen + kNoiseSd * rng.normal();
        for (std::size_t k = 0; k < content_dim; ++k)
            d.rejected.at(i, k) = q_rejected + kNoiseSd * rng.normal();
        d.cue_on_chosen[i] =
            forced_cue ? (*forced_cue)[i] : std::uint8_t(rng.bernoulli(p) ? 1 : 0);
    }
    return d;
}

void place_concepts(PreferenceDataset& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
        const bool color_on_chosen = d.cue_on_chosen[i] != 0;
        d.chosen.at(i, ConceptLayout::color_col) = color_on_chosen ? 1.0 : 0.0;
        d.chosen.at(i, ConceptLayout::size_col) = color_on_chosen ? 0.0 : 1.0;
        d.rejected.at(i, ConceptLayout::color_col) = color_on_chosen ? 0.0 : 1.0;
        d.rejected.at(i, ConceptLayout::size_col) = color_on_chosen ? 1.0 : 0.0;
    }
}

}  // namespace

PreferenceDataset make_sycophancy_corpus(std::size_t base_size, double p,
                                         std::uint64_t seed) {
    using L = SycophancyLayout;
    PreferenceDataset d = build_pairs(base_size, p, seed, L::context_dim, L::item_dim,
                                      L::content_dim, kGapLoSyc, kGapHiSyc, nullptr);
    for (std::size_t i = 0; i < d.size(); ++i) {
        d.chosen.at(i, L::cue_col) = d.cue_on_chosen[i] ? 1.0 : 0.0;
        d.rejected.at(i, L::cue_col) = d.cue_on_chosen[i] ? 0.0 : 1.0;
    }
    return d;
}

PreferenceDataset make_concept_corpus(std::size_t base_size, double p,
                                      std::uint64_t seed) {
    using L = ConceptLayout;
    PreferenceDataset d = build_pairs(base_size, p, seed, L::context_dim, L::item_dim,
                                      L::content_dim, kGapLoCon, kGapHiCon, nullptr);
    place_concepts(d);
    return d;
}

PreferenceDataset make_concept_probe(std::size_t base_size, std::uint64_t seed) {
    if (base_size % 2 != 0) throw std::invalid_argument("probe size must be even");
    Rng assign_rng = Rng::stream(seed, 1);
    std::vector<std::size_t> perm = assign_rng.permutation(base_size);
    std::vector<std::uint8_t> forced(base_size, 0);
    for (std::size_t i = 0; i < base_size / 2; ++i) forced[perm[i]] = 1;

    using L = ConceptLayout;
    PreferenceDataset d = build_pairs(base_size, 0.5, seed, L::context_dim, L::item_dim,
                                      L::content_dim, kGapLoCon, kGapHiCon, &forced);
    place_concepts(d);
    return d;
}

}  // namespace card
