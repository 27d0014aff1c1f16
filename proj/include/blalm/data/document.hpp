#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace blalm::data {

enum class Source {
    CHILDES,
    FineWebEdu,
    TinyStories,
    Gutenberg,
    SimpleWikipedia,
    CosmopediaWikiHow,
    CosmopediaMath,
    Other,
};

inline constexpr Source kAllSources[] = {Source::CHILDES,         Source::FineWebEdu,        Source::TinyStories,
                                         Source::Gutenberg,       Source::SimpleWikipedia,   Source::CosmopediaWikiHow,
                                         Source::CosmopediaMath,  Source::Other};

// "childes", "fineweb_edu", "tinystories", "gutenberg", "simple_wikipedia",
// "cosmopedia_wikihow", "cosmopedia_math", "other".
std::string to_string(Source s);
Source parse_source(std::string_view name);  // ConfigError on unknown names

struct Document {
    Source source = Source::Other;
    std::string id;
    std::string text;
    std::map<std::string, std::string> meta;  // bookId, externalScore, ...
};

// Words are maximal runs of non-whitespace bytes (ASCII whitespace).
std::uint64_t count_words(std::string_view text);

std::vector<std::string_view> split_words(std::string_view text);

// Paragraphs are separated by one or more blank (whitespace-only) lines.
std::vector<std::string> split_paragraphs(std::string_view text);

}  // namespace blalm::data
