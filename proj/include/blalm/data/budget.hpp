#pragma once

#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

#include "blalm/core/rng.hpp"
#include "blalm/data/document.hpp"

namespace blalm::data {

struct BudgetSpec {
    std::map<Source, std::uint64_t> per_source_word_targets;  // sources absent here only see the total cap
    std::uint64_t total_word_cap = 10'000'000;

    // ConfigError when the targets add up to more than the cap.
    void validate() const;
};

// Word counts per source for the 10M-word and 100M-word tracks.
BudgetSpec strict_small_budget();
BudgetSpec strict_budget();
BudgetSpec budget_preset(std::string_view name);  // "strict-small" | "strict"

struct BudgetResult {
    std::vector<Document> kept;
    std::map<Source, std::uint64_t> words;
    std::map<Source, std::uint64_t> rejected;
    std::uint64_t total_words = 0;
};

// Greedy in stream order. A source stops at the first document that would push it
// past its target; every later document of that source is rejected. The total cap
// stops the whole stream the same way.
BudgetResult enforce_budget(const std::vector<Document>& docs, const BudgetSpec& spec);

// Permutes each source's documents among that source's own positions.
void shuffle_within_sources(std::vector<Document>& docs, const SeededRng& rng);

}  // namespace blalm::data
