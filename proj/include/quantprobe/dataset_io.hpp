#pragma once

// JSON-lines dataset files: one header object, then one object per example.

#include <quantprobe/errors.hpp>
#include <quantprobe/sha256.hpp>
#include <quantprobe/synthgen.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace quantprobe {

struct SplitHeader {
    TaskKind task = TaskKind::Percent;
    ValueRange range{0.0, 0.0};
    std::uint64_t seed = 0;
    Split split = Split::Train;
    LogBase log_base = LogBase::Ten;
    std::optional<std::string> lexicon_sha256;
};

struct SplitFile {
    SplitHeader header;
    std::vector<Example> examples;
};

inline nlohmann::ordered_json header_json(const SplitHeader& h) {
    nlohmann::ordered_json j;
    j["task"] = task_name(h.task);
    j["lo"] = h.range.lo();
    j["hi"] = h.range.hi();
    j["seed"] = h.seed;
    j["split"] = split_name(h.split);
    if (h.lexicon_sha256) j["lexicon_sha256"] = *h.lexicon_sha256;
    // Only written for the non-default natural-log Order variant.
    if (h.task == TaskKind::Order && h.log_base == LogBase::Natural) j["log_base"] = "e";
    return j;
}

inline nlohmann::ordered_json example_json(const Example& ex) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["input"] = ex.input;
    if (ex.label) {
        j["label"] = *ex.label;
        j["unit"] = ex.unit;
    } else {
        j["targets"] = ex.targets;
    }
    return j;
}

inline SplitHeader split_header(const Dataset& ds, Split split) {
    return {ds.task, ds.range, ds.seed, split, ds.log_base, ds.lexicon_sha256};
}

/// Exact bytes of one split file.
inline std::string serialize_split(const Dataset& ds, Split split) {
    std::string out = header_json(split_header(ds, split)).dump();
    out += '\n';
    for (const auto& ex : ds.split(split)) {
        out += example_json(ex).dump();
        out += '\n';
    }
    return out;
}

/// SHA-256 of a split's serialized bytes; names the embedding file for that split.
inline std::string split_digest(const Dataset& ds, Split split) {
    return sha256_hex(serialize_split(ds, split));
}

inline std::filesystem::path split_path(const std::filesystem::path& dir, Split split) {
    return dir / (std::string(split_name(split)) + ".jsonl");
}

inline void write_text_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (Split s : {Split::Train, Split::Test})
        write_text_file(split_path(dir, s), serialize_split(ds, s));
}

inline SplitHeader parse_split_header(const nlohmann::json& j) {
    try {
        SplitHeader h;
        h.task = parse_task(j.at("task").get<std::string>());
        h.range = ValueRange(j.at("lo").get<double>(), j.at("hi").get<double>());
        h.seed = j.at("seed").get<std::uint64_t>();
        const auto split = j.at("split").get<std::string>();
        if (split == "train") h.split = Split::Train;
        else if (split == "test") h.split = Split::Test;
        else throw FormatError("unknown split '" + split + "'");
        if (j.contains("lexicon_sha256")) h.lexicon_sha256 = j.at("lexicon_sha256").get<std::string>();
        if (j.contains("log_base") && j.at("log_base").get<std::string>() == "e")
            h.log_base = LogBase::Natural;
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad dataset header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad dataset header: ") + e.what());
    }
}

inline SplitFile parse_split(std::string_view text) {
    SplitFile file;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = text.substr(pos, nl - pos);
        const auto offset = pos;
        pos = nl + 1;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(line_no + 1) + ": " + e.what(), offset);
        }
        if (line_no++ == 0) {
            file.header = parse_split_header(j);
            continue;
        }
        try {
            Example ex;
            ex.id = j.at("id").get<std::uint64_t>();
            ex.input = j.at("input").get<std::string>();
            if (j.contains("label")) {
                ex.label = j.at("label").get<std::size_t>();
                ex.unit = j.at("unit").get<std::string>();
            } else {
                ex.targets = j.at("targets").get<std::vector<double>>();
            }
            file.examples.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what(), offset);
        }
    }
    if (line_no == 0) throw FormatError("dataset file is empty");
    return file;
}

inline SplitFile read_split(const std::filesystem::path& path) {
    return parse_split(read_text_file(path));
}

}  // namespace quantprobe
