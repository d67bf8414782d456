#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// Preference pairs in feature space. Each pair is a shared context row plus
// two item rows; the chosen item is the ground-truth-correct one. Items are
// laid out as a content block followed by the cue or concept indicator
// coordinates, so a flagged coordinate always differs within a pair.
struct PreferenceDataset {
    double p = 0.5;  // requested cue/concept injection rate
    Tensor context;  // N x context_dim
    Tensor chosen;   // N x item_dim
    Tensor rejected; // N x item_dim
    std::vector<std::uint8_t> cue_on_chosen;   // surrogate tag per pair
    std::vector<std::uint8_t> chosen_correct;  // ground-truth flag per pair

    std::size_t size() const { return cue_on_chosen.size(); }
    std::size_t item_dim() const { return chosen.cols(); }
    std::size_t context_dim() const { return context.cols(); }
};

// Agreement-cue corpus: items carry a correctness-bearing content block and
// one binary agreement-cue coordinate. With probability p the cue sits on
// the chosen item, otherwise on the rejected one.
struct SycophancyLayout {
    static constexpr std::size_t content_dim = 6;
    static constexpr std::size_t cue_col = content_dim;
    static constexpr std::size_t item_dim = content_dim + 1;
    static constexpr std::size_t context_dim = 4;
};

// Concept corpus: items carry a label-bearing content block and two concept
// indicator coordinates (color, size). Every pair has one color-bearing and
// one size-bearing item; with probability p the chosen item is the
// color-bearing one.
struct ConceptLayout {
    static constexpr std::size_t content_dim = 6;
    static constexpr std::size_t color_col = content_dim;
    static constexpr std::size_t size_col = content_dim + 1;
    static constexpr std::size_t item_dim = content_dim + 2;
    static constexpr std::size_t context_dim = 4;
};

PreferenceDataset make_sycophancy_corpus(std::size_t base_size, double p,
                                         std::uint64_t seed);
PreferenceDataset make_concept_corpus(std::size_t base_size, double p,
                                      std::uint64_t seed);

// Concept pairs with the color indicator assigned to exactly half the chosen
// items (base_size must be even), for bias probes.
PreferenceDataset make_concept_probe(std::size_t base_size, std::uint64_t seed);

}  // namespace card
