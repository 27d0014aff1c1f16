#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "blalm/data/bpe.hpp"

namespace blalm::data {

struct TokenStream {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> boundaries;  // offset where each document starts
};

// Concatenates documents, putting `separator` between consecutive documents.
TokenStream join_documents(const std::vector<std::vector<TokenId>>& docs,
                           std::optional<TokenId> separator = BpeTokenizer::kEndOfText);

struct PackStats {
    std::uint64_t documents = 0;
    std::uint64_t stream_tokens = 0;
    std::uint64_t dropped_tokens = 0;
};

struct PackedBlocks {
    std::size_t context_length = 0;
    std::vector<TokenId> tokens;  // count() * context_length ids
    PackStats stats;

    std::size_t count() const noexcept { return context_length == 0 ? 0 : tokens.size() / context_length; }
    std::span<const TokenId> block(std::size_t i) const {
        return {tokens.data() + i * context_length, context_length};
    }
};

// Consecutive non-overlapping blocks of exactly context_length; the partial tail
// is dropped and counted. With vocab_size > 0 every id must be below it.
PackedBlocks pack_and_chunk(const TokenStream& stream, std::size_t context_length, std::size_t vocab_size = 0);

// Format: "BLPK", u32 version, u32 context_length, u64 count, then the ids as
// little-endian int32.
void write_blocks(const std::filesystem::path& path, const PackedBlocks& blocks);
PackedBlocks read_blocks(const std::filesystem::path& path);

}  // namespace blalm::data
