#pragma once

#include <cstdint>

#include "blalm/data/bpe.hpp"
#include "blalm/data/packing.hpp"

namespace blalm::testing {

struct DeskData {
    data::BpeTokenizer tokenizer;
    data::PackedBlocks blocks;
    std::uint64_t words_kept = 0;
};

// desk_corpus -> run_filters -> BPE (vocab_size) -> pack_and_chunk(context).
DeskData build_desk_data(std::uint64_t words, std::uint64_t seed, std::size_t vocab_size, std::size_t context);

}  // namespace blalm::testing
