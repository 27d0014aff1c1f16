#include "desk_pipeline.hpp"

#include "blalm/data/filters.hpp"
#include "desk_corpus.hpp"

namespace blalm::testing {

DeskData build_desk_data(std::uint64_t words, std::uint64_t seed, std::size_t vocab_size, std::size_t context) {
    // the filters drop part of the raw corpus: size the raw draw so that about
    // `words` survive
    auto filtered = [&](std::uint64_t raw) {
        SeededRng rng(seed);
        return data::run_filters(desk_corpus(raw, seed), data::FilterConfig{}, rng).kept;
    };
    auto count = [](const std::vector<data::Document>& docs) {
        std::uint64_t n = 0;
        for (const auto& d : docs) {
            n += data::count_words(d.text);
        }
        return n;
    };
    auto kept = filtered(words);
    const double ratio = static_cast<double>(count(kept)) / static_cast<double>(words);
    if (ratio > 0.0 && ratio < 1.0) {
        kept = filtered(static_cast<std::uint64_t>(static_cast<double>(words) / ratio));
    }
    DeskData out;
    out.words_kept = count(kept);
    std::vector<std::string> texts;
    for (const auto& d : kept) {
        texts.push_back(d.text);
    }
    data::BpeTrainConfig tc;
    tc.vocab_size = vocab_size;
    out.tokenizer = data::BpeTokenizer::train(texts, tc);
    std::vector<std::vector<data::TokenId>> docs;
    for (const auto& t : texts) {
        docs.push_back(out.tokenizer.encode(t));
    }
    out.blocks = data::pack_and_chunk(data::join_documents(docs), context, out.tokenizer.vocab_size());
    return out;
}

}  // namespace blalm::testing
