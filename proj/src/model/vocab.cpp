#include "xfit/model/vocab.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "xfit/errors.hpp"

namespace xfit::model {

const char* to_string(TokenMode mode) { return mode == TokenMode::character ? "char" : "word"; }

TokenMode parse_token_mode(std::string_view s) {
    if (s == "char") return TokenMode::character;
    if (s == "word") return TokenMode::word;
    throw UsageError("unknown token mode '" + std::string(s) + "' (expected char or word)");
}

namespace {

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;  // stray continuation byte: treat as its own unit
}

}  // namespace

std::vector<std::string> split_units(std::string_view text, TokenMode mode) {
    std::vector<std::string> out;
    if (mode == TokenMode::character) {
        for (std::size_t i = 0; i < text.size();) {
            const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
            out.emplace_back(text.substr(i, n));
            i += n;
        }
        return out;
    }
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

Vocabulary::Vocabulary(std::vector<std::string> units, TokenMode mode) : mode_(mode) {
    tokens_ = {std::string(pad_token), std::string(bos_token), std::string(eos_token), std::string(unk_token)};
    tokens_.insert(tokens_.end(), std::make_move_iterator(units.begin()), std::make_move_iterator(units.end()));
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
        if (!index_.emplace(tokens_[i], i).second) throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& u : split_units(text, mode_)) ids.push_back(id(u));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    bool first = true;
    for (int i : ids) {
        if (i < reserved_count) continue;
        if (mode_ == TokenMode::word && !first) out += ' ';
        out += token(i);
        first = false;
    }
    return out;
}

Vocabulary build_vocab(std::span<const std::string> corpus, TokenMode mode, std::size_t max_size) {
    if (max_size < 5) throw UsageError("build_vocab: max-size must be at least 5, got " + std::to_string(max_size));
    if (corpus.empty()) throw UsageError("build_vocab: empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus) {
        for (auto& u : split_units(text, mode)) ++counts[u];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> units;
    for (auto& [u, _] : ranked) {
        if (units.size() + Vocabulary::reserved_count >= max_size) break;
        if (u == Vocabulary::pad_token || u == Vocabulary::bos_token || u == Vocabulary::eos_token ||
            u == Vocabulary::unk_token) {
            continue;
        }
        units.push_back(u);
    }
    return Vocabulary(std::move(units), mode);
}

}  // namespace xfit::model
