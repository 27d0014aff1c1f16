#include "blalm/data/document.hpp"

#include "blalm/core/errors.hpp"

namespace blalm::data {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool blank(std::string_view line) {
    for (char c : line) {
        if (!is_space(c)) {
            return false;
        }
    }
    return true;
}

}  // namespace

std::string to_string(Source s) {
    switch (s) {
        case Source::CHILDES: return "childes";
        case Source::FineWebEdu: return "fineweb_edu";
        case Source::TinyStories: return "tinystories";
        case Source::Gutenberg: return "gutenberg";
        case Source::SimpleWikipedia: return "simple_wikipedia";
        case Source::CosmopediaWikiHow: return "cosmopedia_wikihow";
        case Source::CosmopediaMath: return "cosmopedia_math";
        case Source::Other: return "other";
    }
    return "other";
}

Source parse_source(std::string_view name) {
    for (Source s : kAllSources) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown source '" + std::string(name) + "'");
}

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) {
            ++i;
        }
        if (i > start) {
            words.push_back(text.substr(start, i - start));
        }
    }
    return words;
}

std::uint64_t count_words(std::string_view text) {
    std::uint64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = is_space(c);
        if (!space && !in_word) {
            ++n;
        }
        in_word = !space;
    }
    return n;
}

std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> paragraphs;
    std::string current;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto line = text.substr(pos, end - pos);
        if (blank(line)) {
            if (!current.empty()) {
                paragraphs.push_back(std::move(current));
                current.clear();
            }
        } else {
            if (!current.empty()) {
                current += '\n';
            }
            current += line;
        }
        pos = end + 1;
    }
    if (!current.empty()) {
        paragraphs.push_back(std::move(current));
    }
    return paragraphs;
}

}  // namespace blalm::data
