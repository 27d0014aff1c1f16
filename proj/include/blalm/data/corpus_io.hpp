#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blalm/data/budget.hpp"
#include "blalm/data/document.hpp"
#include "blalm/data/filters.hpp"

namespace blalm::data {

// One JSON object per line: {"source", "id", "text", "meta"}. `source` falls back
// to default_source when a record has none; non-string meta values are kept as
// their JSON text. InputError names the offending line.
std::vector<Document> read_jsonl(const std::filesystem::path& path, std::optional<Source> default_source = {});
void write_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs);

// Every regular file under dir (sorted by path) as one document, or one
// document per non-blank line when lines_as_documents is set.
std::vector<Document> read_text_dir(const std::filesystem::path& dir, Source source, bool lines_as_documents);

// Reads a .jsonl file, or a directory of text files labelled with `source`.
std::vector<Document> read_corpus(const std::filesystem::path& path, std::optional<Source> source,
                                  bool lines_as_documents);

// Deterministic JSON text (sorted keys) for the filter and budget stages.
std::string manifest_json(const FilterReport& filters, const BudgetResult* budget);

}  // namespace blalm::data
