#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blalm/core/rng.hpp"
#include "blalm/data/document.hpp"

namespace blalm::data {

// Reason codes recorded for rejections.
inline constexpr std::string_view kMinLength = "min_length<7";
inline constexpr std::string_view kEmptyAfterStrip = "empty_after_strip";
inline constexpr std::string_view kNoLongParagraph = "no_paragraph>=15";
inline constexpr std::string_view kNoNamedEntity = "no_named_entity";
inline constexpr std::string_view kBookCap = "book_cap";
inline constexpr std::string_view kLowScore = "score<min";
inline constexpr std::string_view kMissingScore = "missing_score";
inline constexpr std::string_view kTooLong = "too_long";
inline constexpr std::string_view kEmpty = "empty";

struct FilterOutcome {
    std::optional<Document> kept;
    std::string reason;  // empty when kept

    bool passed() const noexcept { return kept.has_value(); }

    static FilterOutcome keep(Document d) { return {std::move(d), {}}; }
    static FilterOutcome reject(std::string_view why) { return {std::nullopt, std::string(why)}; }
};

// Grammar correction stays outside the pipeline; a hook may rewrite each utterance.
using TextHook = std::function<std::string(std::string_view)>;

struct ChildesOptions {
    std::size_t min_words = 7;
    TextHook grammar_hook;
};

// Per line: strips a leading `*<UPPERCASE>:` tag and the whitespace after it,
// then drops lines with fewer than min_words words. Rejected if no line survives.
FilterOutcome childes_filter(const Document& d, const ChildesOptions& opt = {});

std::string strip_speaker_tag(std::string_view line);

struct TinyStoriesOptions {
    std::vector<std::string> templates{"Once upon a time"};  // case-insensitive prefixes
};

// Deletes the first sentence when it starts with a template.
FilterOutcome tinystories_filter(const Document& d, const TinyStoriesOptions& opt = {});

// Keeps paragraphs with at least min_words words, joined by blank lines.
FilterOutcome simplewiki_filter(const Document& d, std::size_t min_words = 15);

// Stand-in for named-entity recognition, swappable through GutenbergOptions.
using EntityPredicate = std::function<bool(std::string_view)>;

// True when some word other than a sentence-initial one starts with an ASCII
// capital. The pronoun "I" and its contractions do not count.
bool has_capitalized_non_initial_word(std::string_view text);

struct GutenbergOptions {
    std::size_t per_book_cap = 200;
    EntityPredicate has_entity = has_capitalized_non_initial_word;
};

struct Rejection {
    std::string id;
    Source source = Source::Other;
    std::string reason;
};

struct GroupFilterResult {
    std::vector<Document> kept;
    std::vector<std::size_t> kept_index;  // positions of kept in the input
    std::vector<Rejection> rejected;
};

// Groups by meta "bookId" (InputError when missing), rejects samples without
// entities, then draws per_book_cap samples without replacement from each book.
// Each book's draw uses its own stream forked from rng by a hash of the book id,
// so results do not depend on which other books are present. Kept samples
// retain input order.
GroupFilterResult gutenberg_filter(const std::vector<Document>& docs, const GutenbergOptions& opt,
                                   const SeededRng& rng);

// Splits every document into paragraph samples with ids "<id>#<k>".
std::vector<Document> gutenberg_samples(const std::vector<Document>& docs);

// Keeps documents whose meta "externalScore" >= min_score. Unscored documents
// pass only when min_score <= 0, incrementing *missing_scores.
FilterOutcome score_threshold_filter(const Document& d, double min_score, std::uint64_t* missing_scores = nullptr);

struct CosmopediaOptions {
    std::uint64_t max_words = 2000;
    double min_score = 0.0;
};

FilterOutcome cosmopedia_filter(const Document& d, const CosmopediaOptions& opt = {},
                                std::uint64_t* missing_scores = nullptr);

struct FilterConfig {
    ChildesOptions childes;
    TinyStoriesOptions tinystories;
    std::size_t simplewiki_min_words = 15;
    GutenbergOptions gutenberg;
    bool gutenberg_split_paragraphs = true;
    double fineweb_min_score = 0.0;
    CosmopediaOptions cosmopedia;
};

struct SourceStats {
    std::uint64_t documents_in = 0;
    std::uint64_t kept = 0;
    std::uint64_t rejected = 0;
    std::uint64_t words_in = 0;
    std::uint64_t words_out = 0;
    std::map<std::string, std::uint64_t> reasons;
};

struct FilterReport {
    std::vector<Document> kept;
    std::vector<Rejection> rejected;
    std::map<Source, SourceStats> per_source;
    std::uint64_t missing_score_warnings = 0;
};

// Routes every document to its source's filter; Other only drops empty text.
// Output order follows input order (Gutenberg samples in place of their books).
FilterReport run_filters(const std::vector<Document>& docs, const FilterConfig& cfg, const SeededRng& rng);

}  // namespace blalm::data
