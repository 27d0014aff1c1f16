#include "desk_corpus.hpp"

#include <cmath>

#include "blalm/core/rng.hpp"

namespace blalm::testing {

namespace {

const std::vector<std::string> kNames{"Tom", "Lily", "Max", "Sue", "Ben", "Mia", "Sam", "Anna", "Leo", "Emma"};
const std::vector<std::string> kAnimals{"dog", "cat", "bird", "fish", "bunny", "duck", "frog", "horse", "mouse", "bear"};
const std::vector<std::string> kThings{"ball", "kite", "box", "cup", "book", "hat", "car", "cake", "boat", "drum"};
const std::vector<std::string> kAdjectives{"red", "big", "little", "happy", "blue", "soft", "green", "old", "funny", "shiny"};
const std::vector<std::string> kVerbs{"saw", "found", "liked", "took", "gave", "made", "wanted", "had", "lost", "held"};
const std::vector<std::string> kPlaces{"park", "garden", "house", "forest", "river", "school", "farm", "beach"};
const std::vector<std::string> kTags{"*MOT:", "*FAT:", "*CHI:", "*INV:", "*GRA:"};
const std::vector<std::string> kTopics{"river", "mountain", "city", "planet", "animal", "tree", "language", "island"};
const std::vector<std::string> kTopicVerbs{"is", "has", "contains", "supports", "becomes", "includes"};
const std::vector<std::string> kTopicWords{"many", "large", "small", "important", "old", "famous", "common", "long"};

std::string invented_word(SeededRng& rng, std::uint64_t syllables) {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "pl", "gr"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ee"};
    static const char* codas[] = {"", "n", "r", "s", "t", "k", "m", "l"};
    std::string w;
    for (std::uint64_t s = 0; s < syllables; ++s) {
        w += onsets[rng.below(18)];
        w += vowels[rng.below(8)];
        w += codas[rng.below(8)];
    }
    return w;
}

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {
        // invented words widen every word class; a few are common, most are rare
        SeededRng lex = rng_.fork(0x6c6578);
        for (auto* list : {&names_, &animals_, &things_, &adjectives_, &places_}) {
            for (int i = 0; i < 120; ++i) {
                list->push_back(invented_word(lex, 1 + lex.below(3)));
            }
        }
        for (auto& n : names_) {
            n[0] = static_cast<char>(n[0] - 'a' + 'A');
        }
    }

    const std::string& pick(const std::vector<std::string>& v) {
        const std::vector<std::string>* extra = &v == &kNames     ? &names_
                                                : &v == &kAnimals ? &animals_
                                                : &v == &kThings  ? &things_
                                                : &v == &kAdjectives ? &adjectives_
                                                : &v == &kPlaces  ? &places_
                                                                  : nullptr;
        if (extra != nullptr && coin(0.35)) {
            return (*extra)[rng_.below(rng_.below(extra->size()) + 1)];
        }
        return v[rng_.below(v.size())];
    }
    bool coin(double p) { return rng_.uniform() < p; }
    std::uint64_t below(std::uint64_t n) { return rng_.below(n); }

    std::string noun_phrase() {
        std::string np = coin(0.5) ? "the " : "a ";
        if (coin(0.5)) {
            np += pick(kAdjectives) + " ";
        }
        return np + (coin(0.5) ? pick(kAnimals) : pick(kThings));
    }

    std::string story_sentence() {
        std::string s = coin(0.4) ? pick(kNames) : capitalize(noun_phrase());
        s += " " + pick(kVerbs) + " " + noun_phrase();
        if (coin(0.4)) {
            s += " in the " + pick(kPlaces);
        }
        return s + ".";
    }

    std::string utterance() {
        static const std::vector<std::string> openers{"do you want", "can you see", "look at", "where is",
                                                       "let's find", "I like"};
        std::string s = pick(openers) + " " + noun_phrase();
        if (coin(0.6)) {
            s += " in the " + pick(kPlaces);
        }
        return s + (coin(0.5) ? " ?" : " .");
    }

    std::string wiki_sentence() {
        return "The " + pick(kTopics) + " " + pick(kTopicVerbs) + " " + pick(kTopicWords) + " " + pick(kTopics) +
               "s and " + pick(kTopicWords) + " " + pick(kTopics) + "s.";
    }

    static std::string capitalize(std::string s) {
        if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') {
            s[0] = static_cast<char>(s[0] - 'a' + 'A');
        }
        return s;
    }

private:
    SeededRng rng_;
    std::vector<std::string> names_, animals_, things_, adjectives_, places_;
};

}  // namespace

std::vector<data::Document> desk_corpus(std::uint64_t target_words, std::uint64_t seed) {
    Gen g(seed);
    std::vector<data::Document> docs;
    std::uint64_t words = 0;
    std::size_t n = 0;
    while (words < target_words) {
        data::Document d;
        d.id = "desk-" + std::to_string(n++);
        switch (g.below(4)) {
            case 0: {
                d.source = data::Source::CHILDES;
                std::string text;
                const auto lines = 3 + g.below(6);
                for (std::uint64_t i = 0; i < lines; ++i) {
                    text += g.pick(kTags) + " " + (g.coin(0.2) ? "no " + g.noun_phrase() : g.utterance()) + "\n";
                }
                d.text = text;
                break;
            }
            case 1: {
                d.source = data::Source::TinyStories;
                std::string text = "Once upon a time, there was " + g.noun_phrase() + ".";
                const auto sentences = 3 + g.below(6);
                for (std::uint64_t i = 0; i < sentences; ++i) {
                    text += " " + g.story_sentence();
                }
                d.text = text;
                break;
            }
            case 2: {
                d.source = data::Source::SimpleWikipedia;
                std::string text;
                const auto paragraphs = 1 + g.below(3);
                for (std::uint64_t p = 0; p < paragraphs; ++p) {
                    const auto sentences = 1 + g.below(4);
                    for (std::uint64_t i = 0; i < sentences; ++i) {
                        text += (i ? " " : "") + g.wiki_sentence();
                    }
                    text += "\n\n";
                }
                d.text = text;
                break;
            }
            default: {
                d.source = data::Source::Gutenberg;
                d.meta["bookId"] = "book-" + std::to_string(g.below(5));
                std::string text;
                const auto paragraphs = 2 + g.below(4);
                for (std::uint64_t p = 0; p < paragraphs; ++p) {
                    const auto sentences = 2 + g.below(3);
                    for (std::uint64_t i = 0; i < sentences; ++i) {
                        std::string s = g.story_sentence();
                        if (g.coin(0.5)) {
                            s.pop_back();
                            s += " with " + g.pick(kNames) + ".";
                        }
                        text += (i ? " " : "") + s;
                    }
                    text += "\n\n";
                }
                d.text = text;
                break;
            }
        }
        words += data::count_words(d.text);
        docs.push_back(std::move(d));
    }
    return docs;
}

std::string pseudo_word_text(std::size_t distinct, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<std::string> lexicon;
    lexicon.reserve(distinct);
    for (std::size_t i = 0; i < distinct; ++i) {
        lexicon.push_back(invented_word(rng, 2 + rng.below(3)));
    }
    std::string text;
    for (std::size_t i = 0; i < distinct; ++i) {
        // every word twice, frequent ones more often
        const auto reps = 2 + static_cast<std::size_t>(20.0 / std::sqrt(static_cast<double>(i + 1)));
        for (std::size_t r = 0; r < reps; ++r) {
            text += lexicon[i];
            text += (r % 12 == 11) ? ".\n" : " ";
        }
    }
    return text;
}

}  // namespace blalm::testing
