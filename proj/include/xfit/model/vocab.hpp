#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xfit::model {

enum class TokenMode { character, word };

const char* to_string(TokenMode mode);
TokenMode parse_token_mode(std::string_view s);

// Splits text into vocabulary units: UTF-8 code points or whitespace-separated words.
std::vector<std::string> split_units(std::string_view text, TokenMode mode);

class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int unk_id = 3;
    static constexpr int reserved_count = 4;

    static constexpr std::string_view pad_token = "<pad>";
    static constexpr std::string_view bos_token = "<s>";
    static constexpr std::string_view eos_token = "</s>";
    static constexpr std::string_view unk_token = "<unk>";

    Vocabulary() : Vocabulary({}, TokenMode::character) {}
    // `units` excludes the reserved tokens, which are always ids 0..3.
    Vocabulary(std::vector<std::string> units, TokenMode mode);

    [[nodiscard]] int id(std::string_view token) const;
    [[nodiscard]] const std::string& token(int id) const;
    [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }
    [[nodiscard]] TokenMode mode() const { return mode_; }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    [[nodiscard]] std::vector<int> encode(std::string_view text) const;
    // Reserved ids are dropped.
    [[nodiscard]] std::string decode(std::span<const int> ids) const;

    bool operator==(const Vocabulary& other) const { return mode_ == other.mode_ && tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    TokenMode mode_;
};

// Reserved tokens plus the most frequent units, ties broken lexicographically,
// capped at max_size entries in total.
Vocabulary build_vocab(std::span<const std::string> corpus, TokenMode mode, std::size_t max_size);

}  // namespace xfit::model
