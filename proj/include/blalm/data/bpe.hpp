#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace blalm::data {

using TokenId = std::int32_t;

struct BpeTrainConfig {
    std::size_t vocab_size = 15000;
    std::uint64_t min_pair_frequency = 2;  // stop when the best pair is rarer
};

// Splits text into merge-isolated chunks: an optional single leading space plus a
// run of letters (ASCII letters and all non-ASCII bytes), digits, or other
// symbols; leftover whitespace forms its own chunks. Chunks concatenate to text.
std::vector<std::string_view> pretokenize(std::string_view text);

// Byte-level BPE. Ids 0..255 are raw bytes, 256..258 are specials and merges
// take ids from 259 upward in the order they were learned.
class BpeTokenizer {
public:
    static constexpr TokenId kEndOfText = 256;
    static constexpr TokenId kPad = 257;
    static constexpr TokenId kUnknown = 258;
    static constexpr TokenId kFirstMerge = 259;

    BpeTokenizer();  // no merges: plain bytes

    // ConfigError when config.vocab_size < 259. Stops early when no pair is
    // frequent enough, so vocab_size() may come out smaller than requested.
    static BpeTokenizer train(std::span<const std::string> corpus, const BpeTrainConfig& config);

    // InputError when a merge refers to an id that does not exist yet.
    static BpeTokenizer from_merges(std::vector<std::pair<TokenId, TokenId>> merges);

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;  // InputError on ids >= vocab_size()

    std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(kFirstMerge) + merges_.size(); }
    const std::vector<std::pair<TokenId, TokenId>>& merges() const noexcept { return merges_; }
    const std::string& token_bytes(TokenId id) const;
    static std::string_view special_name(TokenId id);

    // Plain text: a two-line header, then "left right" per merge.
    void save(const std::filesystem::path& path) const;
    static BpeTokenizer load(const std::filesystem::path& path);

private:
    void rebuild_tables();
    void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

    std::vector<std::pair<TokenId, TokenId>> merges_;
    std::unordered_map<std::uint64_t, std::size_t> rank_;  // pair key -> merge index
    std::vector<std::string> bytes_;                       // id -> byte string
};

}  // namespace blalm::data
