#include "blalm/data/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

#include "blalm/core/errors.hpp"

namespace blalm::data {

namespace {

std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

enum class CharClass { Space, Letter, Digit, Symbol };

CharClass classify(unsigned char c) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        return CharClass::Space;
    }
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) {
        return CharClass::Letter;
    }
    if (c >= '0' && c <= '9') {
        return CharClass::Digit;
    }
    return CharClass::Symbol;
}

// Merges every left-to-right, non-overlapping occurrence of (a, b) into id.
bool merge_in_place(std::vector<TokenId>& symbols, TokenId a, TokenId b, TokenId id) {
    bool changed = false;
    std::size_t w = 0;
    for (std::size_t r = 0; r < symbols.size(); ++r) {
        if (r + 1 < symbols.size() && symbols[r] == a && symbols[r + 1] == b) {
            symbols[w++] = id;
            ++r;
            changed = true;
        } else {
            symbols[w++] = symbols[r];
        }
    }
    symbols.resize(w);
    return changed;
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> chunks;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const std::size_t start = i;
        auto cls = classify(static_cast<unsigned char>(text[i]));
        if (cls == CharClass::Space) {
            while (i < n && classify(static_cast<unsigned char>(text[i])) == CharClass::Space) {
                ++i;
            }
            // a single trailing ' ' belongs to the following word
            if (i < n && text[i - 1] == ' ') {
                if (i - 1 > start) {
                    chunks.push_back(text.substr(start, i - 1 - start));
                }
                const std::size_t word = i - 1;
                cls = classify(static_cast<unsigned char>(text[i]));
                while (i < n && classify(static_cast<unsigned char>(text[i])) == cls) {
                    ++i;
                }
                chunks.push_back(text.substr(word, i - word));
            } else {
                chunks.push_back(text.substr(start, i - start));
            }
            continue;
        }
        while (i < n && classify(static_cast<unsigned char>(text[i])) == cls) {
            ++i;
        }
        chunks.push_back(text.substr(start, i - start));
    }
    return chunks;
}

std::string_view BpeTokenizer::special_name(TokenId id) {
    switch (id) {
        case kEndOfText: return "<|endoftext|>";
        case kPad: return "<|pad|>";
        case kUnknown: return "<|unk|>";
        default: return {};
    }
}

BpeTokenizer::BpeTokenizer() { rebuild_tables(); }

void BpeTokenizer::rebuild_tables() {
    bytes_.clear();
    bytes_.reserve(vocab_size());
    for (int b = 0; b < 256; ++b) {
        bytes_.emplace_back(1, static_cast<char>(b));
    }
    for (TokenId s = kEndOfText; s < kFirstMerge; ++s) {
        bytes_.emplace_back(special_name(s));
    }
    rank_.clear();
    for (std::size_t m = 0; m < merges_.size(); ++m) {
        const auto [a, b] = merges_[m];
        const auto next = static_cast<TokenId>(kFirstMerge + m);
        const bool special = (a >= kEndOfText && a < kFirstMerge) || (b >= kEndOfText && b < kFirstMerge);
        if (a < 0 || b < 0 || a >= next || b >= next || special) {
            throw InputError("merge " + std::to_string(m) + " (" + std::to_string(a) + ", " + std::to_string(b) +
                             ") refers to an invalid id");
        }
        if (!rank_.emplace(pair_key(a, b), m).second) {
            throw InputError("merge " + std::to_string(m) + " repeats an earlier pair");
        }
        bytes_.push_back(bytes_[static_cast<std::size_t>(a)] + bytes_[static_cast<std::size_t>(b)]);
    }
}

BpeTokenizer BpeTokenizer::from_merges(std::vector<std::pair<TokenId, TokenId>> merges) {
    BpeTokenizer tok;
    tok.merges_ = std::move(merges);
    tok.rebuild_tables();
    return tok;
}

BpeTokenizer BpeTokenizer::train(std::span<const std::string> corpus, const BpeTrainConfig& config) {
    if (config.vocab_size < static_cast<std::size_t>(kFirstMerge)) {
        throw ConfigError("vocab_size " + std::to_string(config.vocab_size) + " is below the 259 byte and special ids");
    }
    if (config.vocab_size > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
        throw ConfigError("vocab_size too large");
    }
    std::unordered_map<std::string_view, std::uint64_t> chunk_counts;
    for (const auto& doc : corpus) {
        for (auto chunk : pretokenize(doc)) {
            ++chunk_counts[chunk];
        }
    }
    // sorted so ids of words, and with them tie-breaking, do not depend on hashing
    std::vector<std::pair<std::string_view, std::uint64_t>> sorted(chunk_counts.begin(), chunk_counts.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<std::vector<TokenId>> words;
    std::vector<std::uint64_t> freq;
    std::unordered_map<std::uint64_t, std::int64_t> counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
    for (const auto& [chunk, f] : sorted) {
        if (chunk.size() < 2) {
            continue;
        }
        std::vector<TokenId> w;
        for (unsigned char c : chunk) {
            w.push_back(c);
        }
        const auto idx = static_cast<std::uint32_t>(words.size());
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            const auto key = pair_key(w[i], w[i + 1]);
            counts[key] += static_cast<std::int64_t>(f);
            auto& list = where[key];
            if (list.empty() || list.back() != idx) {
                list.push_back(idx);
            }
        }
        words.push_back(std::move(w));
        freq.push_back(f);
    }

    // max-heap on count, ties to the smaller pair; stale entries are skipped on pop
    using Entry = std::pair<std::int64_t, std::uint64_t>;
    auto worse = [](const Entry& x, const Entry& y) {
        return x.first != y.first ? x.first < y.first : x.second > y.second;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
    for (const auto& [key, c] : counts) {
        heap.emplace(c, key);
    }

    BpeTokenizer tok;
    std::vector<std::uint32_t> visited(words.size(), std::numeric_limits<std::uint32_t>::max());
    std::unordered_map<std::uint64_t, std::int64_t> delta;
    while (tok.merges_.size() + kFirstMerge < config.vocab_size && !heap.empty()) {
        const auto [c, key] = heap.top();
        heap.pop();
        const auto it = counts.find(key);
        if (it == counts.end() || it->second != c) {
            continue;
        }
        if (c < static_cast<std::int64_t>(std::max<std::uint64_t>(config.min_pair_frequency, 1))) {
            break;
        }
        const auto a = static_cast<TokenId>(key >> 32);
        const auto b = static_cast<TokenId>(key & 0xffffffffULL);
        const auto id = static_cast<TokenId>(kFirstMerge + tok.merges_.size());
        const auto stamp = static_cast<std::uint32_t>(tok.merges_.size());
        tok.merges_.emplace_back(a, b);

        delta.clear();
        const auto occurrences = std::move(where[key]);
        where.erase(key);
        for (auto wi : occurrences) {
            if (visited[wi] == stamp) {
                continue;
            }
            visited[wi] = stamp;
            auto& w = words[wi];
            auto merged = w;
            if (!merge_in_place(merged, a, b, id)) {
                continue;
            }
            const auto f = static_cast<std::int64_t>(freq[wi]);
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                delta[pair_key(w[i], w[i + 1])] -= f;
            }
            for (std::size_t i = 0; i + 1 < merged.size(); ++i) {
                const auto k = pair_key(merged[i], merged[i + 1]);
                delta[k] += f;
                auto& list = where[k];
                if (list.empty() || list.back() != wi) {
                    list.push_back(wi);
                }
            }
            w = std::move(merged);
        }
        for (const auto& [k, d] : delta) {
            if (d == 0) {
                continue;
            }
            auto& cur = counts[k];
            cur += d;
            if (cur <= 0) {
                counts.erase(k);
            } else {
                heap.emplace(cur, k);
            }
        }
    }
    tok.rebuild_tables();
    return tok;
}

void BpeTokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
    std::vector<TokenId> symbols;
    symbols.reserve(chunk.size());
    for (unsigned char c : chunk) {
        symbols.push_back(c);
    }
    while (symbols.size() > 1) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto it = rank_.find(pair_key(symbols[i], symbols[i + 1]));
            if (it != rank_.end() && it->second < best) {
                best = it->second;
            }
        }
        if (best == std::numeric_limits<std::size_t>::max()) {
            break;
        }
        const auto [a, b] = merges_[best];
        merge_in_place(symbols, a, b, static_cast<TokenId>(kFirstMerge + best));
    }
    out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size() / 3 + 1);
    for (auto chunk : pretokenize(text)) {
        encode_chunk(chunk, out);
    }
    return out;
}

const std::string& BpeTokenizer::token_bytes(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size()));
    }
    return bytes_[static_cast<std::size_t>(id)];
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) {
        out += token_bytes(id);
    }
    return out;
}

void BpeTokenizer::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw InputError("cannot write tokenizer to " + path.string());
    }
    f << "blalm-bpe 1\n";
    f << "vocab_size " << vocab_size() << "\n";
    for (const auto& [a, b] : merges_) {
        f << a << ' ' << b << '\n';
    }
    if (!f) {
        throw InputError("failed writing tokenizer " + path.string());
    }
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw InputError("cannot open tokenizer " + path.string());
    }
    std::string magic;
    int version = 0;
    std::string key;
    std::size_t vocab = 0;
    std::string line;
    std::getline(f, line);
    std::istringstream(line) >> magic >> version;
    if (magic != "blalm-bpe" || version != 1) {
        throw InputError(path.string() + " is not a tokenizer file");
    }
    std::getline(f, line);
    std::istringstream(line) >> key >> vocab;
    if (key != "vocab_size") {
        throw InputError(path.string() + ": missing vocab_size line");
    }
    std::vector<std::pair<TokenId, TokenId>> merges;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        TokenId a = 0;
        TokenId b = 0;
        std::string extra;
        if (!(ls >> a >> b) || (ls >> extra)) {
            throw InputError(path.string() + ": malformed merge line '" + line + "'");
        }
        merges.emplace_back(a, b);
    }
    auto tok = from_merges(std::move(merges));
    if (tok.vocab_size() != vocab) {
        throw InputError(path.string() + ": header says vocab_size " + std::to_string(vocab) + " but file has " +
                         std::to_string(tok.vocab_size()));
    }
    return tok;
}

}  // namespace blalm::data
