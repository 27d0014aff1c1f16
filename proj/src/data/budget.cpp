#include "blalm/data/budget.hpp"

#include <string>

#include "blalm/core/errors.hpp"

namespace blalm::data {

void BudgetSpec::validate() const {
    std::uint64_t sum = 0;
    for (const auto& [source, target] : per_source_word_targets) {
        sum += target;
    }
    if (sum > total_word_cap) {
        throw ConfigError("per-source word targets sum to " + std::to_string(sum) + ", above the total cap " +
                          std::to_string(total_word_cap));
    }
}

BudgetSpec strict_small_budget() {
    return {{{Source::CHILDES, 2'000'000},
             {Source::FineWebEdu, 2'000'000},
             {Source::TinyStories, 1'000'000},
             {Source::Gutenberg, 1'500'000},
             {Source::SimpleWikipedia, 1'500'000},
             {Source::CosmopediaWikiHow, 1'800'000},
             {Source::CosmopediaMath, 200'000}},
            10'000'000};
}

BudgetSpec strict_budget() {
    return {{{Source::CHILDES, 8'700'000},
             {Source::FineWebEdu, 21'000'000},
             {Source::TinyStories, 35'000'000},
             {Source::Gutenberg, 1'700'000},
             {Source::SimpleWikipedia, 22'600'000},
             {Source::CosmopediaWikiHow, 10'100'000},
             {Source::CosmopediaMath, 300'000}},
            100'000'000};
}

BudgetSpec budget_preset(std::string_view name) {
    if (name == "strict-small") {
        return strict_small_budget();
    }
    if (name == "strict") {
        return strict_budget();
    }
    throw ConfigError("unknown budget preset '" + std::string(name) + "'");
}

BudgetResult enforce_budget(const std::vector<Document>& docs, const BudgetSpec& spec) {
    spec.validate();
    BudgetResult result;
    std::map<Source, bool> closed;
    bool total_closed = false;
    for (const auto& d : docs) {
        const std::uint64_t n = count_words(d.text);
        auto& used = result.words[d.source];
        const auto target = spec.per_source_word_targets.find(d.source);
        if (!total_closed && result.total_words + n > spec.total_word_cap) {
            total_closed = true;
        }
        if (!closed[d.source] && target != spec.per_source_word_targets.end() && used + n > target->second) {
            closed[d.source] = true;
        }
        if (total_closed || closed[d.source]) {
            ++result.rejected[d.source];
            continue;
        }
        used += n;
        result.total_words += n;
        result.kept.push_back(d);
    }
    return result;
}

void shuffle_within_sources(std::vector<Document>& docs, const SeededRng& rng) {
    std::map<Source, std::vector<std::size_t>> positions;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        positions[docs[i].source].push_back(i);
    }
    for (auto& [source, slots] : positions) {
        std::vector<Document> group;
        group.reserve(slots.size());
        for (auto i : slots) {
            group.push_back(std::move(docs[i]));
        }
        SeededRng source_rng = rng.fork(static_cast<std::uint64_t>(source));
        source_rng.shuffle(group);
        for (std::size_t j = 0; j < slots.size(); ++j) {
            docs[slots[j]] = std::move(group[j]);
        }
    }
}

}  // namespace blalm::data
