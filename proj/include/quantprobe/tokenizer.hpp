#pragma once

#include <quantprobe/synthgen.hpp>

#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace quantprobe {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

/// Closed token vocabulary: fixed builtin tokens, then lexicon words, then extras.
class Vocabulary {
public:
    Vocabulary() {
        add("[PAD]");
        add("[UNK]");
    }

    /// Returns the id of `token`, adding it if absent.
    int add(std::string_view token) {
        auto it = ids_.find(std::string(token));
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.emplace_back(token);
        ids_.emplace(tokens_.back(), id);
        return id;
    }

    int id_of(std::string_view token) const {
        auto it = ids_.find(std::string(token));
        return it == ids_.end() ? kUnkId : it->second;
    }

    bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }

    /// Diagnostic dump: "id<TAB>token" per line.
    void dump(std::ostream& out) const {
        for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

/// Non-reserved builtin tokens in id order.
inline std::vector<std::string> builtin_tokens() {
    std::vector<std::string> out;
    for (char d = '0'; d <= '9'; ++d) out.emplace_back(1, d);
    out.insert(out.end(), {".", "%", "-"});
    for (const auto& m : kOrderMultipliers) out.emplace_back(m.word);
    out.insert(out.end(), {"basis", "points"});
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool is_numeral_chunk(std::string_view chunk) {
    for (char c : chunk)
        if (!std::isdigit(static_cast<unsigned char>(c)) && c != '.' && c != '%' && c != '-') return false;
    return true;
}

}  // namespace detail

inline Vocabulary build_vocab(const UnitLexicon* lexicon = nullptr,
                              const std::vector<std::string>& extra_words = {}) {
    Vocabulary vocab;
    for (const auto& t : builtin_tokens()) vocab.add(t);
    if (lexicon)
        for (const auto& unit : lexicon->units())
            for (auto word : detail::split_ws(unit)) vocab.add(word);
    for (const auto& w : extra_words) vocab.add(w);
    return vocab;
}

struct TokenSeq {
    std::vector<int> ids;
    std::vector<std::string> surface;
    /// True when the token was preceded by whitespace in the source text.
    std::vector<bool> space_before;

    std::size_t size() const { return ids.size(); }
};

/// Whitespace split; numeral chunks (digits, '.', '%', '-') split into characters.
inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
    const auto chunks = detail::split_ws(text);
    if (chunks.empty()) throw DataError("cannot tokenize empty text");
    TokenSeq seq;
    for (std::size_t c = 0; c < chunks.size(); ++c) {
        const auto chunk = chunks[c];
        if (detail::is_numeral_chunk(chunk)) {
            for (std::size_t k = 0; k < chunk.size(); ++k) {
                const std::string s(1, chunk[k]);
                seq.ids.push_back(vocab.id_of(s));
                seq.surface.push_back(s);
                seq.space_before.push_back(c > 0 && k == 0);
            }
        } else {
            seq.ids.push_back(vocab.id_of(chunk));
            seq.surface.emplace_back(chunk);
            seq.space_before.push_back(c > 0);
        }
    }
    return seq;
}

/// Inverse of tokenize for single-space-separated text.
inline std::string detokenize(const TokenSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.space_before[i]) out += ' ';
        out += seq.surface[i];
    }
    return out;
}

}  // namespace quantprobe
