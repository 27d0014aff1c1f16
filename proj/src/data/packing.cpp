#include "blalm/data/packing.hpp"

#include <fstream>
#include <string>

#include "blalm/core/errors.hpp"
#include "core/le_io.hpp"

namespace blalm::data {

namespace {
constexpr char kMagic[4] = {'B', 'L', 'P', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

TokenStream join_documents(const std::vector<std::vector<TokenId>>& docs, std::optional<TokenId> separator) {
    TokenStream s;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (i > 0 && separator) {
            s.tokens.push_back(*separator);
        }
        s.boundaries.push_back(s.tokens.size());
        s.tokens.insert(s.tokens.end(), docs[i].begin(), docs[i].end());
    }
    return s;
}

PackedBlocks pack_and_chunk(const TokenStream& stream, std::size_t context_length, std::size_t vocab_size) {
    if (context_length == 0) {
        throw ConfigError("context_length must be positive");
    }
    if (vocab_size > 0) {
        for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
            const auto id = stream.tokens[i];
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
                throw InputError("token " + std::to_string(id) + " at position " + std::to_string(i) +
                                 " outside vocabulary of " + std::to_string(vocab_size));
            }
        }
    }
    PackedBlocks out;
    out.context_length = context_length;
    const std::size_t blocks = stream.tokens.size() / context_length;
    out.tokens.assign(stream.tokens.begin(), stream.tokens.begin() + static_cast<std::ptrdiff_t>(blocks * context_length));
    out.stats.documents = stream.boundaries.size();
    out.stats.stream_tokens = stream.tokens.size();
    out.stats.dropped_tokens = stream.tokens.size() - blocks * context_length;
    return out;
}

void write_blocks(const std::filesystem::path& path, const PackedBlocks& blocks) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    f.write(kMagic, 4);
    io::put<std::uint32_t>(f, kVersion);
    io::put<std::uint32_t>(f, static_cast<std::uint32_t>(blocks.context_length));
    io::put<std::uint64_t>(f, blocks.count());
    io::put_array(f, blocks.tokens.data(), blocks.count() * blocks.context_length);
    if (!f) {
        throw InputError("failed writing " + path.string());
    }
}

PackedBlocks read_blocks(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw InputError("cannot open " + path.string());
    }
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw InputError(path.string() + " is not a packed block file");
    }
    const auto version = io::get<std::uint32_t>(f);
    if (version != kVersion) {
        throw InputError(path.string() + ": unsupported version " + std::to_string(version));
    }
    PackedBlocks out;
    out.context_length = io::get<std::uint32_t>(f);
    const auto count = io::get<std::uint64_t>(f);
    if (out.context_length == 0) {
        throw InputError(path.string() + ": zero context length");
    }
    out.tokens.resize(count * out.context_length);
    io::get_array(f, out.tokens.data(), out.tokens.size());
    return out;
}

}  // namespace blalm::data
