#include "blalm/data/corpus_io.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "blalm/core/errors.hpp"

namespace blalm::data {

using nlohmann::json;

std::vector<Document> read_jsonl(const std::filesystem::path& path, std::optional<Source> default_source) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw InputError("cannot open " + path.string());
    }
    std::vector<Document> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(lineno);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(where + ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
            throw InputError(where + ": record needs a string \"text\" field");
        }
        Document d;
        if (rec.contains("source")) {
            try {
                d.source = parse_source(rec["source"].get<std::string>());
            } catch (const std::exception& e) {
                throw InputError(where + ": " + e.what());
            }
        } else if (default_source) {
            d.source = *default_source;
        } else {
            throw InputError(where + ": record has no source and none was given");
        }
        d.id = rec.contains("id") ? (rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump())
                                  : path.filename().string() + ":" + std::to_string(lineno);
        d.text = rec["text"].get<std::string>();
        if (rec.contains("meta")) {
            if (!rec["meta"].is_object()) {
                throw InputError(where + ": \"meta\" must be an object");
            }
            for (const auto& [k, v] : rec["meta"].items()) {
                d.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
            }
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    for (const auto& d : docs) {
        json rec = {{"source", to_string(d.source)}, {"id", d.id}, {"text", d.text}};
        if (!d.meta.empty()) {
            rec["meta"] = d.meta;
        }
        f << rec.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
    if (!f) {
        throw InputError("failed writing " + path.string());
    }
}

std::vector<Document> read_text_dir(const std::filesystem::path& dir, Source source, bool lines_as_documents) {
    if (!std::filesystem::is_directory(dir)) {
        throw InputError(dir.string() + " is not a directory");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Document> docs;
    for (const auto& file : files) {
        std::ifstream f(file, std::ios::binary);
        if (!f) {
            throw InputError("cannot open " + file.string());
        }
        const auto rel = std::filesystem::relative(file, dir).generic_string();
        if (lines_as_documents) {
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(f, line)) {
                ++lineno;
                if (!line.empty() && line.back() == '\r') {
                    line.pop_back();
                }
                if (count_words(line) == 0) {
                    continue;
                }
                docs.push_back({source, rel + ":" + std::to_string(lineno), line, {}});
            }
        } else {
            std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            Document d{source, rel, std::move(text), {}};
            if (source == Source::Gutenberg) {
                d.meta["bookId"] = rel;
            }
            docs.push_back(std::move(d));
        }
    }
    return docs;
}

std::vector<Document> read_corpus(const std::filesystem::path& path, std::optional<Source> source,
                                  bool lines_as_documents) {
    if (std::filesystem::is_directory(path)) {
        if (!source) {
            throw InputError("directory input " + path.string() + " needs a source label");
        }
        return read_text_dir(path, *source, lines_as_documents);
    }
    return read_jsonl(path, source);
}

std::string manifest_json(const FilterReport& filters, const BudgetResult* budget) {
    json m;
    m["schema"] = "blalm.manifest/1";
    json sources = json::object();
    for (const auto& [source, st] : filters.per_source) {
        sources[to_string(source)] = {{"documents_in", st.documents_in}, {"kept", st.kept},
                                      {"rejected", st.rejected},         {"words_in", st.words_in},
                                      {"words_out", st.words_out},       {"reasons", st.reasons}};
    }
    m["filters"] = {{"sources", sources}, {"missing_score_warnings", filters.missing_score_warnings}};
    if (budget != nullptr) {
        json words = json::object();
        json rejected = json::object();
        for (const auto& [source, n] : budget->words) {
            words[to_string(source)] = n;
        }
        for (const auto& [source, n] : budget->rejected) {
            rejected[to_string(source)] = n;
        }
        m["budget"] = {{"kept_documents", budget->kept.size()},
                       {"total_words", budget->total_words},
                       {"words", words},
                       {"rejected", rejected}};
    }
    return m.dump(2) + "\n";
}

}  // namespace blalm::data
