#include "blalm/data/filters.hpp"

#include <algorithm>
#include <cctype>

#include "blalm/core/errors.hpp"

namespace blalm::data {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        lines.push_back(text.substr(pos, end - pos));
        pos = end + 1;
    }
    return lines;
}

std::string_view skip_space(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && is_space(s[i])) {
        ++i;
    }
    return s.substr(i);
}

bool starts_with_ci(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) {
        return false;
    }
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (lower(text[i]) != lower(prefix[i])) {
            return false;
        }
    }
    return true;
}

// Index just past the first sentence terminator (plus closing quotes), or npos.
std::size_t first_sentence_end(std::string_view text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') {
            continue;
        }
        std::size_t j = i + 1;
        while (j < text.size() && (text[j] == '"' || text[j] == '\'' || text[j] == ')')) {
            ++j;
        }
        if (j == text.size() || is_space(text[j])) {
            return j;
        }
    }
    return std::string_view::npos;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

std::string strip_speaker_tag(std::string_view line) {
    const auto rest = skip_space(line);
    if (rest.size() < 3 || rest[0] != '*' || !is_upper(rest[1])) {
        return std::string(line);
    }
    std::size_t i = 1;
    while (i < rest.size() && is_upper(rest[i])) {
        ++i;
    }
    if (i == rest.size() || rest[i] != ':') {
        return std::string(line);
    }
    return std::string(skip_space(rest.substr(i + 1)));
}

FilterOutcome childes_filter(const Document& d, const ChildesOptions& opt) {
    std::string out;
    for (auto line : split_lines(d.text)) {
        std::string utterance = strip_speaker_tag(line);
        if (opt.grammar_hook) {
            utterance = opt.grammar_hook(utterance);
        }
        if (count_words(utterance) < opt.min_words) {
            continue;
        }
        if (!out.empty()) {
            out += '\n';
        }
        out += utterance;
    }
    if (out.empty()) {
        return FilterOutcome::reject(kMinLength);
    }
    Document kept = d;
    kept.text = std::move(out);
    return FilterOutcome::keep(std::move(kept));
}

FilterOutcome tinystories_filter(const Document& d, const TinyStoriesOptions& opt) {
    const auto body = skip_space(d.text);
    if (body.empty()) {
        return FilterOutcome::reject(kEmpty);
    }
    for (const auto& tmpl : opt.templates) {
        if (tmpl.empty() || !starts_with_ci(body, tmpl)) {
            continue;
        }
        // "Once upon a timer" is not the template
        if (body.size() > tmpl.size() && is_alnum(body[tmpl.size()]) && is_alnum(tmpl.back())) {
            continue;
        }
        const std::size_t end = first_sentence_end(body);
        const auto rest = end == std::string_view::npos ? std::string_view{} : skip_space(body.substr(end));
        if (count_words(rest) == 0) {
            return FilterOutcome::reject(kEmptyAfterStrip);
        }
        Document kept = d;
        kept.text = std::string(rest);
        return FilterOutcome::keep(std::move(kept));
    }
    return FilterOutcome::keep(d);
}

FilterOutcome simplewiki_filter(const Document& d, std::size_t min_words) {
    std::string out;
    for (const auto& p : split_paragraphs(d.text)) {
        if (count_words(p) < min_words) {
            continue;
        }
        if (!out.empty()) {
            out += "\n\n";
        }
        out += p;
    }
    if (out.empty()) {
        return FilterOutcome::reject(kNoLongParagraph);
    }
    Document kept = d;
    kept.text = std::move(out);
    return FilterOutcome::keep(std::move(kept));
}

bool has_capitalized_non_initial_word(std::string_view text) {
    bool sentence_start = true;
    for (auto word : split_words(text)) {
        std::size_t b = 0;
        while (b < word.size() && !is_alnum(word[b]) && static_cast<unsigned char>(word[b]) < 0x80) {
            ++b;
        }
        const auto core = word.substr(b);
        if (!sentence_start && !core.empty() && is_upper(core[0])) {
            const bool pronoun = core == "I" || (core.size() > 1 && core[0] == 'I' && core[1] == '\'');
            if (!pronoun) {
                return true;
            }
        }
        std::size_t e = word.size();
        while (e > 0 && (word[e - 1] == '"' || word[e - 1] == '\'' || word[e - 1] == ')')) {
            --e;
        }
        sentence_start = e > 0 && (word[e - 1] == '.' || word[e - 1] == '!' || word[e - 1] == '?');
    }
    return false;
}

std::vector<Document> gutenberg_samples(const std::vector<Document>& docs) {
    std::vector<Document> samples;
    for (const auto& d : docs) {
        std::size_t k = 0;
        for (auto& p : split_paragraphs(d.text)) {
            Document s;
            s.source = d.source;
            s.id = d.id + "#" + std::to_string(k++);
            s.text = std::move(p);
            s.meta = d.meta;
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

GroupFilterResult gutenberg_filter(const std::vector<Document>& docs, const GutenbergOptions& opt,
                                   const SeededRng& rng) {
    if (!opt.has_entity) {
        throw ConfigError("gutenberg_filter: entity predicate is empty");
    }
    GroupFilterResult result;
    std::vector<std::string> book_order;
    std::map<std::string, std::vector<std::size_t>> qualifying;
    std::vector<bool> keep(docs.size(), false);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        const auto it = d.meta.find("bookId");
        if (it == d.meta.end()) {
            throw InputError("gutenberg document '" + d.id + "' has no bookId");
        }
        if (!qualifying.contains(it->second)) {
            book_order.push_back(it->second);
            qualifying[it->second];
        }
        if (count_words(d.text) == 0) {
            result.rejected.push_back({d.id, d.source, std::string(kEmpty)});
        } else if (!opt.has_entity(d.text)) {
            result.rejected.push_back({d.id, d.source, std::string(kNoNamedEntity)});
        } else {
            qualifying[it->second].push_back(i);
        }
    }
    for (const auto& book : book_order) {
        auto indices = qualifying[book];
        if (indices.size() > opt.per_book_cap) {
            SeededRng book_rng = rng.fork(fnv1a(book));
            // partial Fisher-Yates: the first cap slots are a uniform sample
            for (std::size_t j = 0; j < opt.per_book_cap; ++j) {
                const auto r = j + static_cast<std::size_t>(book_rng.below(indices.size() - j));
                std::swap(indices[j], indices[r]);
            }
            for (std::size_t j = opt.per_book_cap; j < indices.size(); ++j) {
                result.rejected.push_back({docs[indices[j]].id, docs[indices[j]].source, std::string(kBookCap)});
            }
            indices.resize(opt.per_book_cap);
        }
        for (auto i : indices) {
            keep[i] = true;
        }
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (keep[i]) {
            result.kept.push_back(docs[i]);
            result.kept_index.push_back(i);
        }
    }
    return result;
}

FilterOutcome score_threshold_filter(const Document& d, double min_score, std::uint64_t* missing_scores) {
    if (count_words(d.text) == 0) {
        return FilterOutcome::reject(kEmpty);
    }
    const auto it = d.meta.find("externalScore");
    if (it == d.meta.end()) {
        if (min_score <= 0.0) {
            if (missing_scores != nullptr) {
                ++*missing_scores;
            }
            return FilterOutcome::keep(d);
        }
        return FilterOutcome::reject(kMissingScore);
    }
    double score = 0.0;
    std::size_t used = 0;
    try {
        score = std::stod(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != it->second.size()) {
        throw InputError("document '" + d.id + "': externalScore '" + it->second + "' is not a number");
    }
    if (score >= min_score) {
        return FilterOutcome::keep(d);
    }
    return FilterOutcome::reject(kLowScore);
}

FilterOutcome cosmopedia_filter(const Document& d, const CosmopediaOptions& opt, std::uint64_t* missing_scores) {
    if (count_words(d.text) > opt.max_words) {
        return FilterOutcome::reject(kTooLong);
    }
    return score_threshold_filter(d, opt.min_score, missing_scores);
}

FilterReport run_filters(const std::vector<Document>& docs, const FilterConfig& cfg, const SeededRng& rng) {
    FilterReport report;
    std::vector<std::optional<Document>> slots(docs.size());
    std::vector<Document> gutenberg_input;
    std::vector<std::size_t> gutenberg_slot;

    auto reject = [&](const std::string& id, Source s, const std::string& reason) {
        auto& st = report.per_source[s];
        ++st.rejected;
        ++st.reasons[reason];
        report.rejected.push_back({id, s, reason});
    };

    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        auto& st = report.per_source[d.source];
        if (d.source == Source::Gutenberg) {
            gutenberg_input.push_back(d);
            gutenberg_slot.push_back(i);
            continue;
        }
        ++st.documents_in;
        st.words_in += count_words(d.text);
        FilterOutcome out;
        switch (d.source) {
            case Source::CHILDES: out = childes_filter(d, cfg.childes); break;
            case Source::TinyStories: out = tinystories_filter(d, cfg.tinystories); break;
            case Source::SimpleWikipedia: out = simplewiki_filter(d, cfg.simplewiki_min_words); break;
            case Source::FineWebEdu:
                out = score_threshold_filter(d, cfg.fineweb_min_score, &report.missing_score_warnings);
                break;
            case Source::CosmopediaWikiHow:
            case Source::CosmopediaMath:
                out = cosmopedia_filter(d, cfg.cosmopedia, &report.missing_score_warnings);
                break;
            default:
                out = count_words(d.text) == 0 ? FilterOutcome::reject(kEmpty) : FilterOutcome::keep(d);
                break;
        }
        if (out.passed()) {
            slots[i] = std::move(out.kept);
        } else {
            reject(d.id, d.source, out.reason);
        }
    }

    // Gutenberg: samples are filtered jointly, then put back where their book was.
    std::map<std::size_t, std::vector<Document>> gutenberg_kept;
    if (!gutenberg_input.empty()) {
        std::vector<Document> samples;
        std::vector<std::size_t> owner;
        for (std::size_t b = 0; b < gutenberg_input.size(); ++b) {
            auto parts = cfg.gutenberg_split_paragraphs ? gutenberg_samples({gutenberg_input[b]})
                                                        : std::vector<Document>{gutenberg_input[b]};
            auto& st = report.per_source[Source::Gutenberg];
            st.words_in += count_words(gutenberg_input[b].text);
            st.documents_in += parts.size();
            for (auto& p : parts) {
                samples.push_back(std::move(p));
                owner.push_back(gutenberg_slot[b]);
            }
        }
        auto result = gutenberg_filter(samples, cfg.gutenberg, rng.fork(fnv1a("gutenberg")));
        for (std::size_t j = 0; j < result.kept.size(); ++j) {
            gutenberg_kept[owner[result.kept_index[j]]].push_back(std::move(result.kept[j]));
        }
        for (const auto& r : result.rejected) {
            reject(r.id, r.source, r.reason);
        }
    }

    for (std::size_t i = 0; i < docs.size(); ++i) {
        std::vector<Document> emitted;
        if (slots[i]) {
            emitted.push_back(std::move(*slots[i]));
        } else if (auto it = gutenberg_kept.find(i); it != gutenberg_kept.end()) {
            emitted = std::move(it->second);
        }
        for (auto& d : emitted) {
            auto& st = report.per_source[d.source];
            ++st.kept;
            st.words_out += count_words(d.text);
            report.kept.push_back(std::move(d));
        }
    }
    return report;
}

}  // namespace blalm::data
